use serde::{Deserialize, Serialize};

use super::{energy, margin, runner_up, LogitMap};
use crate::autodiff::{Tape, Tensor};
use crate::gnnmodel::{argmax, Model};
use crate::rng;
use crate::syngraph::Graph;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    MarginApprox,
    OracleBisection,
}

impl RadiusMethod {
    pub fn name(self) -> &'static str {
        match self {
            RadiusMethod::MarginApprox => "margin_approx",
            RadiusMethod::OracleBisection => "oracle_bisection",
        }
    }
}

impl std::str::FromStr for RadiusMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin_approx" | "margin" => Ok(RadiusMethod::MarginApprox),
            "oracle_bisection" | "oracle" => Ok(RadiusMethod::OracleBisection),
            other => Err(Error::ConfigInvalid(format!("unknown radius method {other:?}"))),
        }
    }
}

/// Local robustness radius around one embedding, in embedding L2 units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadiusEstimate {
    pub value: f64,
    pub method: RadiusMethod,
    /// False when the oracle found no flip within `r_max`; `value` is then
    /// only an upper-bound witness.
    pub converged: bool,
    pub n_directions: Option<usize>,
    pub tolerance: Option<f64>,
}

impl RadiusEstimate {
    fn zero(method: RadiusMethod) -> Self {
        Self {
            value: 0.0,
            method,
            converged: true,
            n_directions: None,
            tolerance: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub directions: usize,
    pub tol: f64,
    pub r_max: f64,
    /// Points of the coarse scan along each direction before bisection.
    pub grid: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            directions: 16,
            tol: 1e-4,
            r_max: 10.0,
            grid: 256,
            seed: 0,
        }
    }
}

/// Margin, its gradient with respect to the embedding, and the logits.
fn margin_with_grad(head: &impl LogitMap, h: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::row(h.to_vec())?);
    let s = head.logits(&mut tape, &x)?;
    let classes = s.numel();
    let j = runner_up(s.values(), y)?;
    let mut sel = vec![0.0; classes];
    sel[y] = 1.0;
    sel[j] = -1.0;
    let sel = Tensor::new(vec![classes, 1], sel)?;
    let g = tape.matmul(&s, &sel)?;
    let grad = tape.grads_for(&g, &[&x])?.remove(0);
    Ok((g.item()?, grad.into_values()))
}

/// First-order radius `max(0, g / ||grad g||)`.
pub fn margin_radius(head: &impl LogitMap, h: &[f64], y: usize) -> Result<RadiusEstimate> {
    let logits = head.logits_of(h)?;
    let g = margin(&logits, y)?;
    if g <= 0.0 {
        return Ok(RadiusEstimate::zero(RadiusMethod::MarginApprox));
    }
    let (_, grad) = margin_with_grad(head, h, y)?;
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::ZeroGradient { margin: g, norm });
    }
    Ok(RadiusEstimate {
        value: g / norm,
        method: RadiusMethod::MarginApprox,
        converged: true,
        n_directions: None,
        tolerance: None,
    })
}

fn flips(head: &impl LogitMap, h: &[f64], u: &[f64], t: f64, y: usize) -> Result<bool> {
    let p: Vec<f64> = h.iter().zip(u).map(|(a, b)| a + t * b).collect();
    Ok(argmax(&head.logits_of(&p)?) != y)
}

/// Smallest flipping step along `u`, if any within `r_max`.
fn first_flip(head: &impl LogitMap, h: &[f64], u: &[f64], y: usize, cfg: &OracleConfig) -> Result<Option<f64>> {
    let d = h.len();
    let step = cfg.r_max / cfg.grid as f64;
    let mut rows = Vec::with_capacity(cfg.grid * d);
    for k in 1..=cfg.grid {
        let t = k as f64 * step;
        rows.extend(h.iter().zip(u).map(|(a, b)| a + t * b));
    }
    let batch = Tensor::new(vec![cfg.grid, d], rows)?;
    let s = head.logits(&mut Tape::inactive(), &batch)?;
    let classes = s.numel() / cfg.grid;
    let Some(k) = (0..cfg.grid).find(|&k| argmax(&s.values()[k * classes..(k + 1) * classes]) != y) else {
        return Ok(None);
    };
    let (mut lo, mut hi) = (k as f64 * step, (k + 1) as f64 * step);
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if flips(head, h, u, mid, y)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Direction-search estimate of the robustness radius: a coarse scan plus
/// bisection along the steepest margin-descent direction and
/// `directions - 1` random unit directions; the smallest flip wins.
pub fn oracle_radius(head: &impl LogitMap, h: &[f64], y: usize, cfg: &OracleConfig, sample: u64) -> Result<RadiusEstimate> {
    if cfg.directions == 0 || !(cfg.tol > 0.0) || !(cfg.r_max > 0.0) || cfg.grid == 0 {
        return Err(Error::ConfigInvalid(format!("invalid oracle configuration {cfg:?}")));
    }
    let logits = head.logits_of(h)?;
    if margin(&logits, y)? <= 0.0 {
        return Ok(RadiusEstimate {
            n_directions: Some(cfg.directions),
            tolerance: Some(cfg.tol),
            ..RadiusEstimate::zero(RadiusMethod::OracleBisection)
        });
    }
    let (_, grad) = margin_with_grad(head, h, y)?;
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut dirs = Vec::with_capacity(cfg.directions);
    if norm > 1e-12 {
        dirs.push(grad.iter().map(|g| -g / norm).collect::<Vec<_>>());
    }
    let mut rng = rng::stream(cfg.seed, "oracle", sample);
    while dirs.len() < cfg.directions {
        dirs.push(rng::unit_vec(&mut rng, h.len()));
    }
    let mut best: Option<f64> = None;
    for u in &dirs {
        if let Some(t) = first_flip(head, h, u, y, cfg)? {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    }
    Ok(RadiusEstimate {
        value: best.unwrap_or(cfg.r_max),
        method: RadiusMethod::OracleBisection,
        converged: best.is_some(),
        n_directions: Some(cfg.directions),
        tolerance: Some(cfg.tol),
    })
}

/// One row of per-sample diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleDiagnostic {
    pub sample_id: usize,
    pub radius: RadiusEstimate,
    pub margin: f64,
    pub energy: f64,
}

/// Radius, margin and energy for every graph in `graphs`. Misclassified
/// samples get radius 0.
pub fn radius_distribution(
    model: &Model,
    graphs: &[Graph],
    method: RadiusMethod,
    oracle: &OracleConfig,
) -> Result<Vec<SampleDiagnostic>> {
    if graphs.is_empty() {
        return Err(Error::ConfigInvalid("radius distribution of an empty split".into()));
    }
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let h = model.embedding_of(g)?.into_values();
            let logits = model.head.logits_of(&h)?;
            let radius = match method {
                RadiusMethod::MarginApprox => margin_radius(&model.head, &h, g.label)?,
                RadiusMethod::OracleBisection => oracle_radius(&model.head, &h, g.label, oracle, i as u64)?,
            };
            Ok(SampleDiagnostic {
                sample_id: i,
                radius,
                margin: margin(&logits, g.label)?,
                energy: energy(&logits)?,
            })
        })
        .collect()
}
