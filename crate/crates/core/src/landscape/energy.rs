use serde::Serialize;

use crate::autodiff::{logsumexp, TensorError};
use crate::{Error, Result};

/// `E(S) = -log sum_i exp(S_i)`, evaluated with a max shift.
pub fn energy(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteValue { op: "energy" }.into());
    }
    Ok(-logsumexp(logits))
}

/// `S_y - max_{j != y} S_j`.
pub fn margin(logits: &[f64], y: usize) -> Result<f64> {
    let j = runner_up(logits, y)?;
    Ok(logits[y] - logits[j])
}

/// Lowest index `j != y` attaining `max_{j != y} S_j`.
pub fn runner_up(logits: &[f64], y: usize) -> Result<usize> {
    if y >= logits.len() || logits.len() < 2 {
        return Err(Error::ClassOutOfRange {
            class: y,
            classes: logits.len(),
        });
    }
    let mut best: Option<usize> = None;
    for (j, &s) in logits.iter().enumerate() {
        if j != y && best.is_none_or(|b| s > logits[b]) {
            best = Some(j);
        }
    }
    Ok(best.expect("at least two classes"))
}

/// Energy of a binary classifier with logits `(gamma/2, -gamma/2)`:
/// `-log(2 cosh(gamma/2))`, written as `-(|gamma|/2 + log(1 + e^{-|gamma|}))`
/// so it stays finite for large margins.
pub fn binary_energy_of_margin(gamma: f64) -> f64 {
    let a = gamma.abs();
    -(0.5 * a + (-a).exp().ln_1p())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyBoundReport {
    /// Top logit `L`.
    pub top: f64,
    /// Top-2 gap `gamma >= 0`.
    pub gamma: f64,
    pub classes: usize,
    pub energy: f64,
    /// `-L - log(1 + (C - 1) e^{-gamma})`.
    pub lower: f64,
    /// `-L`.
    pub upper: f64,
    /// False when the top logit is tied (`gamma == 0`).
    pub unique_argmax: bool,
}

impl EnergyBoundReport {
    pub fn holds(&self) -> bool {
        self.lower <= self.energy && self.energy <= self.upper
    }
}

/// Log-sum-exp sandwich of the energy in terms of the top logit and the
/// top-2 gap.
pub fn multiclass_energy_bounds(logits: &[f64]) -> Result<EnergyBoundReport> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::ClassOutOfRange { class: 0, classes: c });
    }
    let e = energy(logits)?;
    let mut sorted = logits.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let (top, second) = (sorted[0], sorted[1]);
    let gamma = top - second;
    let lower = -top - ((c - 1) as f64 * (-gamma).exp()).ln_1p();
    Ok(EnergyBoundReport {
        top,
        gamma,
        classes: c,
        energy: e,
        lower,
        upper: -top,
        unique_argmax: gamma > 0.0,
    })
}
