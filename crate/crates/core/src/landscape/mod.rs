//! Loss-landscape diagnostics in embedding space.
//!
//! All radii are measured around a graph embedding `H` with the encoder held
//! fixed; the decision function is the classification margin
//! `g(H) = S_y - max_{j != y} S_j` of the head's logits.

mod energy;
mod lipschitz;
mod radius;
mod sharpness;

pub use energy::{
    binary_energy_of_margin, energy, margin, multiclass_energy_bounds, runner_up, EnergyBoundReport,
};
pub use lipschitz::{
    input_lipschitz, lipschitz_probe, param_lipschitz, perturbation_probe, LipschitzReport, PerturbationProbe,
    SOFTMAX_CE_LOGIT_LIPSCHITZ,
};
pub use radius::{
    margin_radius, oracle_radius, radius_distribution, OracleConfig, RadiusEstimate, RadiusMethod,
    SampleDiagnostic,
};
pub use sharpness::{sam_sharpness, sharpness_of};

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::gnnmodel::{classify, MlpParams};

/// A differentiable map from embeddings `[B, d]` to logits `[B, C]`.
pub trait LogitMap {
    fn logits(&self, tape: &mut Tape, h: &Tensor) -> Result<Tensor, TensorError>;

    fn logits_of(&self, h: &[f64]) -> Result<Vec<f64>, TensorError> {
        let h = Tensor::row(h.to_vec())?;
        Ok(self.logits(&mut Tape::inactive(), &h)?.into_values())
    }
}

impl LogitMap for MlpParams {
    fn logits(&self, tape: &mut Tape, h: &Tensor) -> Result<Tensor, TensorError> {
        classify(tape, self, h)
    }
}

/// `S = H W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineHead {
    pub w: Tensor,
    pub b: Tensor,
}

impl LogitMap for AffineHead {
    fn logits(&self, tape: &mut Tape, h: &Tensor) -> Result<Tensor, TensorError> {
        let s = tape.matmul(h, &self.w)?;
        tape.add_row(&s, &self.b)
    }
}
