use rand::Rng;

use crate::autodiff::{ParamSet, Tape};
use crate::gnnmodel::{erm_loss, Model};
use crate::rng;
use crate::syngraph::Graph;
use crate::{Error, Result};

/// `max(0, max_k L(w + rho d_k) - L(w))` over the normalised ascent
/// direction `grad / ||grad||` (when given and non-zero) and `n_dirs`
/// random unit directions.
pub fn sharpness_of<F>(loss: F, w: &[f64], grad: Option<&[f64]>, rho: f64, n_dirs: usize, rng: &mut impl Rng) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(rho >= 0.0) {
        return Err(Error::ConfigInvalid(format!("rho must be non-negative, got {rho}")));
    }
    let base = loss(w)?;
    let mut dirs = Vec::with_capacity(n_dirs + 1);
    if let Some(g) = grad {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            dirs.push(g.iter().map(|v| v / norm).collect::<Vec<_>>());
        }
    }
    for _ in 0..n_dirs {
        dirs.push(rng::unit_vec(rng, w.len()));
    }
    let mut worst = 0.0f64;
    for d in &dirs {
        let p: Vec<f64> = w.iter().zip(d).map(|(a, b)| a + rho * b).collect();
        worst = worst.max(loss(&p)? - base);
    }
    Ok(worst)
}

/// Sharpness of the mean cross-entropy on `batch` within a parameter ball
/// of radius `rho`.
pub fn sam_sharpness(model: &Model, batch: &[&Graph], rho: f64, n_dirs: usize, seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let loss = erm_loss(&mut tape, &bound, batch)?;
    let grad: Vec<f64> = tape
        .grads_for(&loss, &bound.tensors())?
        .iter()
        .flat_map(|g| g.values().to_vec())
        .collect();
    let eval = |p: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.set_flat_values(p)?;
        Ok(erm_loss(&mut Tape::inactive(), &m, batch)?.item()?)
    };
    let mut rng = rng::stream(seed, "sam/dirs", 0);
    sharpness_of(eval, &model.flat_values(), Some(&grad), rho, n_dirs, &mut rng)
}
