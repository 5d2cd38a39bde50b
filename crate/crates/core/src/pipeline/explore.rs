use serde::Serialize;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::cvae::{decode, CvaeParams};
use crate::landscape::LogitMap;

type TResult<T> = std::result::Result<T, TensorError>;

/// Conditional map from latents `[n, d_z]` to embeddings `[n, d_h]`.
pub trait LatentDecoder {
    fn decode(&self, tape: &mut Tape, z: &Tensor, y: &[usize]) -> TResult<Tensor>;
}

impl LatentDecoder for CvaeParams {
    fn decode(&self, tape: &mut Tape, z: &Tensor, y: &[usize]) -> TResult<Tensor> {
        decode(tape, self, z, y)
    }
}

/// Energy values along one latent trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub y: usize,
    /// `e_0, ..., e_T`.
    pub energies: Vec<f64>,
}

impl EnergyTrace {
    pub fn delta(&self) -> f64 {
        self.energies.last().unwrap() - self.energies[0]
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.energies.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Per-row energies `-logsumexp(S)` of decoded latents, and the gradient of
/// their sum with respect to the latents.
fn energies_and_grad(
    decoder: &impl LatentDecoder,
    head: &impl LogitMap,
    z: &Tensor,
    y: &[usize],
    want_grad: bool,
) -> TResult<(Vec<f64>, Option<Tensor>)> {
    let mut tape = if want_grad { Tape::new() } else { Tape::inactive() };
    let zl = tape.leaf(z);
    let h = decoder.decode(&mut tape, &zl, y)?;
    let s = head.logits(&mut tape, &h)?;
    let lse = tape.logsumexp_rows(&s)?;
    let e = tape.neg(&lse)?;
    let energies = e.values().to_vec();
    if !want_grad {
        return Ok((energies, None));
    }
    let total = tape.sum(&e)?;
    let grad = tape.grads_for(&total, &[&zl])?.remove(0);
    Ok((energies, Some(grad)))
}

/// Energy-guided ascent `z <- z + eta * grad_z E(head(decoder(z, y)))` for
/// `steps` iterations, with decoder and head frozen. Each row of `z0` is an
/// independent trajectory; energies are recorded before every step and
/// after the last one.
pub fn explore(
    decoder: &impl LatentDecoder,
    head: &impl LogitMap,
    y: &[usize],
    z0: &Tensor,
    steps: usize,
    eta: f64,
) -> TResult<(Tensor, Vec<EnergyTrace>)> {
    let (n, _) = z0.dims2()?;
    if y.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "explore",
            detail: format!("{n} latents but {} conditions", y.len()),
        });
    }
    let mut traces: Vec<EnergyTrace> = y
        .iter()
        .map(|&c| EnergyTrace {
            y: c,
            energies: Vec::with_capacity(steps + 1),
        })
        .collect();
    let mut z = z0.detach();
    for _ in 0..steps {
        let (e, grad) = energies_and_grad(decoder, head, &z, y, true)?;
        for (t, v) in traces.iter_mut().zip(e) {
            t.energies.push(v);
        }
        let grad = grad.expect("requested");
        for (zi, gi) in z.values_mut().iter_mut().zip(grad.values()) {
            *zi += eta * gi;
        }
        if z.values().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { op: "explore" });
        }
    }
    let (e, _) = energies_and_grad(decoder, head, &z, y, false)?;
    for (t, v) in traces.iter_mut().zip(e) {
        t.energies.push(v);
    }
    Ok((z, traces))
}
