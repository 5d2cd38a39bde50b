//! Property suite behind `e2a verify`: finite-difference checks of every
//! primitive and composite loss, the energy sandwich, and exactness of the
//! margin radius for affine classifiers.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_check, param_grad_check, Primitive, Tape, Tensor, TensorError};
use crate::cvae::{cvae_loss, decode, CvaeConfig, CvaeParams};
use crate::gnnmodel::{erm_loss, Model, ModelConfig};
use crate::landscape::{
    binary_energy_of_margin, energy, margin_radius, multiclass_energy_bounds, oracle_radius, AffineHead,
    LogitMap, OracleConfig,
};
use crate::pipeline::{CalibrationLoss, EnergyPairing};
use crate::rng::{self, StreamRng};
use crate::syngraph::{make_motif_dataset, DatasetConfig, Graph};
use crate::Result;

/// Largest relative finite-difference error accepted by the gradient suite.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: &'static str,
    pub name: String,
    /// Measured statistic: an error, a violation count or a worst gap.
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl PropertyResult {
    fn at_most(suite: &'static str, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

fn random(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng::normal_vec(r, n)).expect("shape matches")
}

/// Values bounded away from zero so kinks stay out of the difference stencil.
fn away_from_zero(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    let mut t = random(r, shape);
    for v in t.values_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

fn positive(r: &mut StreamRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches")
}

/// Example inputs for every primitive.
fn primitive_cases(r: &mut StreamRng) -> Vec<(Primitive, Vec<Tensor>)> {
    use Primitive::*;
    vec![
        (MatMul, vec![random(r, &[3, 4]), random(r, &[4, 2])]),
        (Add, vec![random(r, &[3, 4]), random(r, &[3, 4])]),
        (Sub, vec![random(r, &[3, 4]), random(r, &[3, 4])]),
        (Mul, vec![random(r, &[3, 4]), random(r, &[3, 4])]),
        (AddRow, vec![random(r, &[3, 4]), random(r, &[1, 4])]),
        (Relu, vec![away_from_zero(r, &[3, 4])]),
        (Tanh, vec![random(r, &[3, 4])]),
        (Exp, vec![random(r, &[3, 4])]),
        (Log, vec![positive(r, &[3, 4])]),
        (LogSumExpRows, vec![random(r, &[3, 4])]),
        (SumRows, vec![random(r, &[3, 4])]),
        (MeanRows, vec![random(r, &[3, 4])]),
        (Sum, vec![random(r, &[3, 4])]),
        (Mean, vec![random(r, &[3, 4])]),
        (ConcatRows, vec![random(r, &[2, 4]), random(r, &[3, 4])]),
        (ConcatCols, vec![random(r, &[3, 2]), random(r, &[3, 4])]),
        (GatherRows(vec![2, 0, 2]), vec![random(r, &[3, 4])]),
        (SquaredNorm, vec![random(r, &[3, 4])]),
        (Scale(-0.7), vec![random(r, &[3, 4])]),
        (SoftmaxCrossEntropy(vec![1, 0, 2]), vec![random(r, &[3, 3])]),
        (Reparameterize, vec![random(r, &[2, 3]), random(r, &[2, 3]), random(r, &[2, 3])]),
    ]
}

/// Worst relative error of `prim` over each of its inputs, the output
/// being reduced to a scalar by a fixed random weighting.
pub fn primitive_grad_error(prim: &Primitive, inputs: &[Tensor], weight_seed: u64) -> Result<f64, TensorError> {
    let out = Tape::inactive().apply(prim, &inputs.iter().collect::<Vec<_>>())?;
    let weights = random(&mut rng::stream(weight_seed, "verify/weights", 0), out.shape());
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let err = finite_diff_check(
            |tape, x| {
                let args: Vec<&Tensor> = inputs.iter().enumerate().map(|(i, t)| if i == k { x } else { t }).collect();
                let y = tape.apply(prim, &args)?;
                let wy = tape.mul(&y, &weights)?;
                tape.sum(&wy)
            },
            &inputs[k],
            1e-6,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn fixture_graphs(n: usize) -> Result<Vec<Graph>> {
    let mut ds = make_motif_dataset(&DatasetConfig::default())?;
    ds.train.truncate(n);
    Ok(ds.train)
}

/// Finite-difference checks of every primitive and of the ERM, cVAE,
/// calibration and latent-energy objectives.
pub fn gradient_suite(seed: u64) -> Result<Vec<PropertyResult>> {
    const SUITE: &str = "gradients";
    let mut r = rng::stream(seed, "verify/grad", 0);
    let mut out = Vec::new();
    for (i, (prim, inputs)) in primitive_cases(&mut r).into_iter().enumerate() {
        let err = primitive_grad_error(&prim, &inputs, seed ^ i as u64)?;
        out.push(PropertyResult::at_most(SUITE, prim.name(), err, GRAD_TOL));
    }

    let graphs = fixture_graphs(4)?;
    let batch: Vec<&Graph> = graphs.iter().collect();
    let d_in = graphs[0].d_in;
    let model = Model::init(d_in, 3, &ModelConfig::default(), seed.wrapping_add(11));
    let err = param_grad_check(&model, |tape, m| erm_loss(tape, m, &batch), 1e-5)?;
    out.push(PropertyResult::at_most(SUITE, "erm_loss", err, GRAD_TOL));

    let hidden = model.head.width();
    let cvae = CvaeParams::init(hidden, 3, &CvaeConfig::default(), seed);
    let h = random(&mut r, &[3, hidden]);
    let noise = random(&mut r, &[3, cvae.latent()]);
    let err = param_grad_check(&cvae, |t, p| cvae_loss(t, p, &h, &[0, 2, 1], &noise), 1e-5)?;
    out.push(PropertyResult::at_most(SUITE, "cvae_loss", err, GRAD_TOL));

    let (h_id, h_pood) = (random(&mut r, &[6, hidden]), random(&mut r, &[6, hidden]));
    let y = [0, 1, 2, 0, 1, 2];
    for pairing in [EnergyPairing::Mean, EnergyPairing::PerPair] {
        let calib = CalibrationLoss {
            lambda: 0.1,
            energy_term: true,
            pairing,
        };
        let head_err = param_grad_check(&model.head, |t, p| calib.eval(t, p, &h_id, &h_pood, &y), 1e-6)?;
        let id_err = finite_diff_check(|t, h| calib.eval(t, &model.head, h, &h_pood, &y), &h_id, 1e-6)?;
        let name = format!("calibration_loss/{pairing:?}").to_lowercase();
        out.push(PropertyResult::at_most(SUITE, name, head_err.max(id_err), GRAD_TOL));
    }

    let z = random(&mut r, &[4, cvae.latent()]);
    let labels = [0, 1, 2, 1];
    let err = finite_diff_check(
        |t, z| {
            let h = decode(t, &cvae, z, &labels)?;
            let s = model.head.logits(t, &h)?;
            let lse = t.logsumexp_rows(&s)?;
            let total = t.sum(&lse)?;
            t.neg(&total)
        },
        &z,
        1e-6,
    )?;
    out.push(PropertyResult::at_most(SUITE, "energy_wrt_latent", err, GRAD_TOL));
    Ok(out)
}

/// Sandwich `-L - log(1 + (C-1) e^-gamma) <= E <= -L` on `n` random logit
/// vectors with `C` in `2..=10`, and strict decrease of the binary energy
/// on a margin grid over `[0, 20]`.
pub fn energy_bound_suite(n: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    const SUITE: &str = "energy_bounds";
    let mut r = rng::stream(seed, "verify/sandwich", 0);
    let mut violations = 0usize;
    for _ in 0..n {
        let c = r.random_range(2..=10);
        let scale = 10f64.powf(r.random_range(-1.0..2.0));
        let logits: Vec<f64> = rng::normal_vec(&mut r, c).into_iter().map(|v| v * scale).collect();
        let b = multiclass_energy_bounds(&logits)?;
        // one rounding step of slack on each side
        let slack = 4.0 * f64::EPSILON * (1.0 + b.top.abs());
        if b.energy > b.upper + slack || b.energy < b.lower - slack {
            violations += 1;
        }
    }
    let mut out = vec![PropertyResult::at_most(SUITE, "sandwich_violations", violations as f64, 0.0)];

    let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
    let mut non_decreasing = 0usize;
    let mut closed_form_gap = 0.0f64;
    for w in grid.windows(2) {
        if binary_energy_of_margin(w[1]) >= binary_energy_of_margin(w[0]) {
            non_decreasing += 1;
        }
    }
    for &g in &grid {
        closed_form_gap = closed_form_gap.max((energy(&[g / 2.0, -g / 2.0])? - binary_energy_of_margin(g)).abs());
    }
    out.push(PropertyResult::at_most(SUITE, "binary_monotone_violations", non_decreasing as f64, 0.0));
    out.push(PropertyResult::at_most(SUITE, "binary_closed_form_gap", closed_form_gap, 1e-12));
    Ok(out)
}

/// Random binary affine classifier `S = H W + b` in `d` dimensions.
pub fn random_affine_head(r: &mut StreamRng, d: usize) -> AffineHead {
    AffineHead {
        w: random(r, &[d, 2]),
        b: random(r, &[1, 2]),
    }
}

/// Worst `|oracle - margin| - (tol + 1e-6 margin)` over `n` random binary
/// affine classifiers; non-positive means the first-order radius is exact.
pub fn affine_radius_gap(n: usize, seed: u64, oracle: &OracleConfig) -> Result<f64> {
    let mut r = rng::stream(seed, "verify/affine", 0);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        let d = r.random_range(2..=16);
        let head = random_affine_head(&mut r, d);
        let h = rng::normal_vec(&mut r, d);
        let logits = head.logits_of(&h)?;
        let y = usize::from(logits[1] > logits[0]);
        let approx = margin_radius(&head, &h, y)?.value;
        let exact = oracle_radius(&head, &h, y, oracle, i as u64)?;
        let allowed = oracle.tol + 1e-6 * approx;
        let gap = if exact.converged {
            (exact.value - approx).abs() - allowed
        } else if approx >= oracle.r_max {
            // beyond the search range on both counts
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(gap);
    }
    Ok(worst)
}

pub fn margin_radius_suite(n: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    let gap = affine_radius_gap(n, seed, &OracleConfig::default())?;
    Ok(vec![PropertyResult::at_most("margin_radius", "affine_exactness_gap", gap, 0.0)])
}

/// Everything `e2a verify` runs.
pub fn verify_all(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = gradient_suite(seed)?;
    out.extend(energy_bound_suite(10_000, seed)?);
    out.extend(margin_radius_suite(100, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_is_covered() {
        let mut r = rng::stream(0, "t", 0);
        let names: Vec<&str> = primitive_cases(&mut r).iter().map(|(p, _)| p.name()).collect();
        assert_eq!(names.len(), 21);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // x * stop_grad(x) has tape gradient x but true gradient 2x
        let x = Tensor::row(vec![0.3, -0.2]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let d = x.detach();
                let y = t.mul(x, &d)?;
                t.sum(&y)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err > 0.4, "{err}");
    }

    #[test]
    fn suites_pass() {
        for r in verify_all(0).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
