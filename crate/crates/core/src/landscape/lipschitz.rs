use rand::Rng;
use serde::Serialize;

use crate::autodiff::{ParamSet, Tape};
use crate::gnnmodel::{erm_loss, Model};
use crate::rng;
use crate::syngraph::Graph;
use crate::{Error, Result};

/// Global Lipschitz constant of softmax cross-entropy with respect to the
/// logits: `||softmax(S) - e_y|| <= sqrt(2)`.
pub const SOFTMAX_CE_LOGIT_LIPSCHITZ: f64 = std::f64::consts::SQRT_2;

const PROBE_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzReport {
    /// Logit gain per unit of node-feature perturbation.
    pub l_x: f64,
    /// Logit gain per unit of parameter perturbation.
    pub l_w: f64,
    pub kappa: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `max_k ||f(x + sigma d_k) - f(x)|| / sigma` over `n` random unit
/// directions `d_k`.
pub fn input_lipschitz<F>(f: F, x: &[f64], n: usize, sigma: f64, rng: &mut impl Rng) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let base = f(x)?;
    let mut best = 0.0f64;
    for _ in 0..n {
        let d = rng::unit_vec(rng, x.len());
        let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + sigma * b).collect();
        best = best.max(dist(&f(&p)?, &base) / sigma);
    }
    Ok(best)
}

fn check_samples(n: usize) -> Result<()> {
    if n < 10 {
        return Err(Error::ConfigInvalid(format!(
            "Lipschitz probes need at least 10 directions, got {n}"
        )));
    }
    Ok(())
}

/// Logit gain of `model` on `g` under random parameter perturbations.
pub fn param_lipschitz(model: &Model, g: &Graph, n_samples: usize, seed: u64) -> Result<f64> {
    check_samples(n_samples)?;
    let w = model.flat_values();
    let mut rng = rng::stream(seed, "lipschitz/w", 0);
    input_lipschitz(
        |p| {
            let mut m = model.clone();
            m.set_flat_values(p)?;
            Ok(m.logits_of(g)?)
        },
        &w,
        n_samples,
        PROBE_SIGMA,
        &mut rng,
    )
}

/// Finite-difference estimates of the input and parameter Jacobian gains
/// of the logits at one graph, and their ratio `kappa = L_w / L_x`.
pub fn lipschitz_probe(model: &Model, g: &Graph, n_samples: usize, seed: u64) -> Result<LipschitzReport> {
    check_samples(n_samples)?;
    let mut rng = rng::stream(seed, "lipschitz/x", 0);
    let l_x = input_lipschitz(
        |x| {
            let mut p = g.clone();
            p.node_features = x.to_vec();
            Ok(model.logits_of(&p)?)
        },
        &g.node_features,
        n_samples,
        PROBE_SIGMA,
        &mut rng,
    )?;
    if l_x < 1e-12 {
        return Err(Error::DegenerateModel(l_x));
    }
    let l_w = param_lipschitz(model, g, n_samples, seed)?;
    Ok(LipschitzReport {
        l_x,
        l_w,
        kappa: l_w / l_x,
    })
}

/// Worst loss increase under random parameter perturbations of norm
/// `rho`, next to the first-order bound `L_loss * L_w * rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbationProbe {
    pub rho: f64,
    pub l_w: f64,
    pub loss_increase: f64,
    pub bound: f64,
}

pub fn perturbation_probe(model: &Model, g: &Graph, rho: f64, n_dirs: usize, seed: u64) -> Result<PerturbationProbe> {
    let l_w = param_lipschitz(model, g, n_dirs, seed)?;
    let loss_at = |m: &Model| -> Result<f64> { Ok(erm_loss(&mut Tape::inactive(), m, &[g])?.item()?) };
    let base = loss_at(model)?;
    let w = model.flat_values();
    let mut rng = rng::stream(seed, "perturb/dirs", 0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_dirs {
        let d = rng::unit_vec(&mut rng, w.len());
        let mut m = model.clone();
        m.set_flat_values(&w.iter().zip(&d).map(|(a, b)| a + rho * b).collect::<Vec<_>>())?;
        worst = worst.max(loss_at(&m)? - base);
    }
    Ok(PerturbationProbe {
        rho,
        l_w,
        loss_increase: worst,
        bound: SOFTMAX_CE_LOGIT_LIPSCHITZ * l_w * rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnnmodel::ModelConfig;
    use crate::syngraph::{compose, BaseFamily, Motif};

    #[test]
    fn affine_map_gain_matches_sampled_directions() {
        let w = [[2.0, -1.0, 0.5], [0.0, 3.0, 1.0]];
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(w.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        };
        let x = [0.3, -0.2, 1.0];
        let est = input_lipschitz(f, &x, 50, 1e-3, &mut rng::stream(3, "t", 0)).unwrap();
        let mut rng = rng::stream(3, "t", 0);
        let exact = (0..50)
            .map(|_| {
                let d = rng::unit_vec(&mut rng, 3);
                f(&d).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        assert!((est - exact).abs() <= 0.05 * exact, "{est} vs {exact}");
        // never above the operator norm
        assert!(est <= 3.5);
    }

    #[test]
    fn zero_model_is_degenerate() {
        let g = compose(BaseFamily::Path, 6, Motif::House, 1, 8, 0).unwrap();
        let mut model = Model::init(8, 3, &ModelConfig::default(), 1);
        model.set_flat_values(&vec![0.0; model.num_values()]).unwrap();
        assert!(matches!(lipschitz_probe(&model, &g, 10, 0), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn too_few_samples_rejected() {
        let g = compose(BaseFamily::Path, 6, Motif::House, 1, 8, 0).unwrap();
        let model = Model::init(8, 3, &ModelConfig::default(), 1);
        assert!(lipschitz_probe(&model, &g, 5, 0).is_err());
    }

    #[test]
    fn probe_reports_positive_gains() {
        let g = compose(BaseFamily::Star, 8, Motif::Cycle5, 2, 8, 1).unwrap();
        let model = Model::init(8, 3, &ModelConfig::default(), 2);
        let r = lipschitz_probe(&model, &g, 20, 4).unwrap();
        assert!(r.l_x > 0.0 && r.l_w > 0.0);
        assert!((r.kappa - r.l_w / r.l_x).abs() < 1e-15);
    }
}
