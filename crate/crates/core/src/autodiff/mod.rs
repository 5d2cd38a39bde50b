//! Dense tensors with reverse-mode differentiation.
//!
//! A [`Tape`] records operations on tracked tensors; [`Tape::backward`]
//! replays them in reverse creation order to accumulate adjoints. Values are
//! `f64` throughout and every operation rejects non-finite results.

mod adam;
mod grad_check;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use grad_check::{central_difference, finite_diff_check, param_grad_check};
pub use tape::{logsumexp, GradientMap, Primitive, Tape};
pub use tensor::{NodeId, Tensor};


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("leaf {0} is not reachable from the loss")]
    UnreachableLeaf(NodeId),
    #[error("node {0} is not a leaf of this tape")]
    UnknownNode(NodeId),
    #[error("tensor is not tracked by a tape")]
    Detached,
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A fixed collection of parameter tensors that can be bound to a tape.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&Tensor>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Copy of `self` whose tensors are leaves of `tape`.
    fn bind(&self, tape: &mut Tape) -> Self {
        let mut bound = self.clone();
        for t in bound.tensors_mut() {
            *t = tape.leaf(t);
        }
        bound
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Flattened copy of every parameter value, in `tensors()` order.
    fn flat_values(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    /// Overwrites every parameter from a flat vector produced by
    /// [`ParamSet::flat_values`].
    fn set_flat_values(&mut self, flat: &[f64]) -> Result<(), TensorError> {
        if flat.len() != self.num_values() {
            return Err(TensorError::ShapeMismatch {
                op: "set_flat_values",
                detail: format!("{} values for {} slots", flat.len(), self.num_values()),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.numel();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn bit_eq(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bit_eq(y))
    }
}
