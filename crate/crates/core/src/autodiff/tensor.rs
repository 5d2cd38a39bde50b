use std::fmt;

use super::TensorError;

/// Index of a record on a [`super::Tape`].
pub type NodeId = usize;

/// Dense row-major array of `f64` values.
///
/// A tensor optionally carries the id of the tape record that produced it.
/// Tensors without a node id are constants as far as differentiation is
/// concerned.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                detail: format!("dimensions must be positive, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                detail: format!("shape {shape:?} needs {numel} values, got {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { op: "new" });
        }
        Ok(Self {
            shape,
            values,
            node: None,
        })
    }

    /// Builds a tensor from values already known to be finite and consistent.
    pub(crate) fn raw(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values,
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(vec![1], vec![value])
    }

    /// `[1, n]` row vector.
    pub fn row(values: Vec<f64>) -> Result<Self, TensorError> {
        let n = values.len();
        Self::new(vec![1, n], values)
    }

    /// `[rows.len(), width]` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(TensorError::ShapeMismatch {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::new(
            vec![rows.len(), width],
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Used by optimizers; the caller is
    /// responsible for keeping the values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: Option<NodeId>) -> Self {
        self.node = node;
        self
    }

    /// Copy of this tensor with the tape link removed.
    pub fn detach(&self) -> Self {
        Self::raw(self.shape.clone(), self.values.clone())
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.is_scalar() {
            Ok(self.values[0])
        } else {
            Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::ShapeMismatch {
                op: "dims2",
                detail: format!("expected a 2-D tensor, got {other:?}"),
            }),
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().unwrap();
        &self.values[i * c..(i + 1) * c]
    }

    /// Same values, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.values.clone())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same-shape bitwise equality of values, ignoring tape links.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values == other.values
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &self.values)
            .field("node", &self.node)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFiniteValue { .. })
        ));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn equality_ignores_node() {
        let a = Tensor::row(vec![1.0, 2.0]).unwrap();
        let b = a.clone().with_node(Some(3));
        assert_eq!(a, b);
        assert!(a.bit_eq(&b));
    }
}
