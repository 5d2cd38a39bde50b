use std::collections::BTreeMap;

use super::tensor::{NodeId, Tensor};
use super::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Differentiable primitives known to the tape.
///
/// Every model in the crate is composed from these; [`Tape::apply`] gives
/// uniform access for catalog-wide checks.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    /// `[m, n] + [1, n]` broadcast over rows.
    AddRow,
    Relu,
    Tanh,
    Exp,
    Log,
    /// Max-shifted log-sum-exp of every row, `[m, n] -> [m, 1]`.
    LogSumExpRows,
    SumRows,
    MeanRows,
    Sum,
    Mean,
    /// Concatenation along the first axis.
    ConcatRows,
    /// Concatenation along the last axis.
    ConcatCols,
    GatherRows(Vec<usize>),
    SquaredNorm,
    Scale(f64),
    /// Mean softmax cross-entropy of `[m, C]` logits against `m` targets.
    SoftmaxCrossEntropy(Vec<usize>),
    /// `mu + exp(logvar / 2) * noise`.
    Reparameterize,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRow => "add_row",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::LogSumExpRows => "logsumexp_rows",
            Primitive::SumRows => "sum_rows",
            Primitive::MeanRows => "mean_rows",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::ConcatRows => "concat_rows",
            Primitive::ConcatCols => "concat_cols",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::Scale(_) => "scale",
            Primitive::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
            Primitive::Reparameterize => "reparameterize",
        }
    }
}

enum Saved {
    Leaf { shape: Vec<usize> },
    MatMul { a: Tensor, b: Tensor },
    Add,
    Sub,
    Mul { a: Vec<f64>, b: Vec<f64> },
    AddRow { cols: usize },
    Relu { input: Vec<f64> },
    Tanh { out: Vec<f64> },
    Exp { out: Vec<f64> },
    Log { input: Vec<f64> },
    LogSumExpRows { softmax: Vec<f64>, cols: usize },
    SumRows { cols: usize },
    MeanRows { cols: usize },
    Sum { n: usize },
    Mean { n: usize },
    ConcatRows { sizes: Vec<usize> },
    ConcatCols { widths: Vec<usize>, rows: usize },
    GatherRows { index: Vec<usize>, src_rows: usize, cols: usize },
    SquaredNorm { input: Vec<f64> },
    Scale { factor: f64 },
    SoftmaxCrossEntropy { probs: Vec<f64>, targets: Vec<usize>, cols: usize },
    Reparameterize { std: Vec<f64>, noise: Vec<f64> },
}

struct Record {
    inputs: Vec<Option<NodeId>>,
    saved: Saved,
    numel: usize,
}

/// Append-only record of differentiable operations.
///
/// Records are created only for operations with at least one tracked input,
/// so constant sub-computations never grow the tape. An inactive tape
/// evaluates every operation without recording anything.
pub struct Tape {
    records: Vec<Record>,
    active: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulated adjoints for requested leaves.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<NodeId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(&node)
    }

    /// Adjoint of a tracked tensor.
    pub fn of(&self, t: &Tensor) -> Result<&Tensor> {
        let id = t.node().ok_or(TensorError::Detached)?;
        self.grads.get(&id).ok_or(TensorError::UnreachableLeaf(id))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.grads.iter()
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| mismatch(op, format!("expected 2-D, got {:?}", t.shape())))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ b` for `a: [k, m]`, `b: [k, n]`.
fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a bᵀ` for `a: [m, k]`, `b: [n, k]`. Transposing `b` first lets the
/// row kernel run; every output still sums its terms in `k` order.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    matmul_raw(a, &bt, m, k, n)
}

/// Max-shifted log-sum-exp of a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            active: true,
        }
    }

    /// A tape that evaluates but never records.
    pub fn inactive() -> Self {
        Self {
            records: Vec::new(),
            active: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Registers `t` as a differentiable leaf. On an inactive tape the
    /// returned tensor stays detached.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        if !self.active {
            return t.detach();
        }
        let id = self.records.len();
        self.records.push(Record {
            inputs: Vec::new(),
            saved: Saved::Leaf {
                shape: t.shape().to_vec(),
            },
            numel: t.numel(),
        });
        t.detach().with_node(Some(id))
    }

    fn record(
        &mut self,
        op: &'static str,
        inputs: &[&Tensor],
        out: Tensor,
        saved: impl FnOnce() -> Saved,
    ) -> Result<Tensor> {
        if out.values().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { op });
        }
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|t| t.node()).collect();
        if !self.active || ids.iter().all(Option::is_none) {
            return Ok(out);
        }
        let id = self.records.len();
        self.records.push(Record {
            inputs: ids,
            saved: saved(),
            numel: out.numel(),
        });
        Ok(out.with_node(Some(id)))
    }

    pub fn apply(&mut self, prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(mismatch(
                    prim.name(),
                    format!("expected {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match prim {
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::AddRow => {
                arity(2)?;
                self.add_row(inputs[0], inputs[1])
            }
            Primitive::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            Primitive::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            Primitive::Exp => {
                arity(1)?;
                self.exp(inputs[0])
            }
            Primitive::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            Primitive::LogSumExpRows => {
                arity(1)?;
                self.logsumexp_rows(inputs[0])
            }
            Primitive::SumRows => {
                arity(1)?;
                self.sum_rows(inputs[0])
            }
            Primitive::MeanRows => {
                arity(1)?;
                self.mean_rows(inputs[0])
            }
            Primitive::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
            Primitive::Mean => {
                arity(1)?;
                self.mean(inputs[0])
            }
            Primitive::ConcatRows => self.concat_rows(inputs),
            Primitive::ConcatCols => self.concat_cols(inputs),
            Primitive::GatherRows(index) => {
                arity(1)?;
                self.gather_rows(inputs[0], index)
            }
            Primitive::SquaredNorm => {
                arity(1)?;
                self.squared_norm(inputs[0])
            }
            Primitive::Scale(c) => {
                arity(1)?;
                self.scale(inputs[0], *c)
            }
            Primitive::SoftmaxCrossEntropy(targets) => {
                arity(1)?;
                self.softmax_cross_entropy(inputs[0], targets)
            }
            Primitive::Reparameterize => {
                arity(3)?;
                self.reparameterize(inputs[0], inputs[1], inputs[2])
            }
        }
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("matmul", a)?;
        let (k2, n) = dims2("matmul", b)?;
        if k != k2 {
            return Err(mismatch(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let out = Tensor::raw(vec![m, n], matmul_raw(a.values(), b.values(), m, k, n));
        self.record("matmul", &[a, b], out, || Saved::MatMul {
            a: a.detach(),
            b: b.detach(),
        })
    }

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
        }
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        let v = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
        let out = Tensor::raw(a.shape().to_vec(), v);
        self.record("add", &[a, b], out, || Saved::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let v = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let out = Tensor::raw(a.shape().to_vec(), v);
        self.record("sub", &[a, b], out, || Saved::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("mul", a, b)?;
        let v = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
        let out = Tensor::raw(a.shape().to_vec(), v);
        self.record("mul", &[a, b], out, || Saved::Mul {
            a: a.values().to_vec(),
            b: b.values().to_vec(),
        })
    }

    /// Adds a `[1, n]` (or `[n]`) bias to every row of `x: [m, n]`.
    pub fn add_row(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (_, n) = dims2("add_row", x)?;
        if bias.numel() != n || bias.shape().iter().product::<usize>() != *bias.shape().last().unwrap() {
            return Err(mismatch(
                "add_row",
                format!("{:?} + {:?}", x.shape(), bias.shape()),
            ));
        }
        let b = bias.values();
        let v = x
            .values()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        self.record("add_row", &[x, bias], out, || Saved::AddRow { cols: n })
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        let v = x.values().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        self.record("relu", &[x], out, || Saved::Relu {
            input: x.values().to_vec(),
        })
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        let v: Vec<f64> = x.values().iter().map(|v| v.tanh()).collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        let saved = out.values().to_vec();
        self.record("tanh", &[x], out, || Saved::Tanh { out: saved })
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        let v: Vec<f64> = x.values().iter().map(|v| v.exp()).collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        let saved = out.values().to_vec();
        self.record("exp", &[x], out, || Saved::Exp { out: saved })
    }

    pub fn log(&mut self, x: &Tensor) -> Result<Tensor> {
        let v = x.values().iter().map(|v| v.ln()).collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        self.record("log", &[x], out, || Saved::Log {
            input: x.values().to_vec(),
        })
    }

    pub fn logsumexp_rows(&mut self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2("logsumexp_rows", x)?;
        if x.values().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { op: "logsumexp_rows" });
        }
        let mut out = Vec::with_capacity(m);
        let mut softmax = Vec::with_capacity(m * n);
        for row in x.values().chunks(n) {
            let lse = logsumexp(row);
            out.push(lse);
            softmax.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::raw(vec![m, 1], out);
        self.record("logsumexp_rows", &[x], out, || Saved::LogSumExpRows {
            softmax,
            cols: n,
        })
    }

    pub fn sum_rows(&mut self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2("sum_rows", x)?;
        let v = x.values().chunks(n).map(|r| r.iter().sum()).collect();
        let out = Tensor::raw(vec![m, 1], v);
        self.record("sum_rows", &[x], out, || Saved::SumRows { cols: n })
    }

    pub fn mean_rows(&mut self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2("mean_rows", x)?;
        let v = x
            .values()
            .chunks(n)
            .map(|r| r.iter().sum::<f64>() / n as f64)
            .collect();
        let out = Tensor::raw(vec![m, 1], v);
        self.record("mean_rows", &[x], out, || Saved::MeanRows { cols: n })
    }

    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::raw(vec![1], vec![x.values().iter().sum()]);
        let n = x.numel();
        self.record("sum", &[x], out, || Saved::Sum { n })
    }

    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel();
        let out = Tensor::raw(vec![1], vec![x.values().iter().sum::<f64>() / n as f64]);
        self.record("mean", &[x], out, || Saved::Mean { n })
    }

    pub fn concat_rows(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat_rows", "no inputs".into()))?;
        let (_, n) = dims2("concat_rows", first)?;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut values = Vec::new();
        for p in parts {
            let (r, c) = dims2("concat_rows", p)?;
            if c != n {
                return Err(mismatch("concat_rows", format!("width {c} vs {n}")));
            }
            sizes.push(r);
            values.extend_from_slice(p.values());
        }
        let rows = sizes.iter().sum();
        let out = Tensor::raw(vec![rows, n], values);
        self.record("concat_rows", parts, out, || Saved::ConcatRows { sizes })
    }

    pub fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat_cols", "no inputs".into()))?;
        let (m, _) = dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims2("concat_cols", p)?;
            if r != m {
                return Err(mismatch("concat_cols", format!("rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut values = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                values.extend_from_slice(&p.values()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::raw(vec![m, total], values);
        self.record("concat_cols", parts, out, || Saved::ConcatCols { widths, rows: m })
    }

    pub fn gather_rows(&mut self, x: &Tensor, index: &[usize]) -> Result<Tensor> {
        let (m, n) = dims2("gather_rows", x)?;
        if index.is_empty() {
            return Err(mismatch("gather_rows", "empty index".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(mismatch("gather_rows", format!("row {bad} out of {m}")));
        }
        let mut values = Vec::with_capacity(index.len() * n);
        for &i in index {
            values.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::raw(vec![index.len(), n], values);
        self.record("gather_rows", &[x], out, || Saved::GatherRows {
            index: index.to_vec(),
            src_rows: m,
            cols: n,
        })
    }

    pub fn squared_norm(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = Tensor::raw(vec![1], vec![x.values().iter().map(|v| v * v).sum()]);
        self.record("squared_norm", &[x], out, || Saved::SquaredNorm {
            input: x.values().to_vec(),
        })
    }

    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Result<Tensor> {
        let v = x.values().iter().map(|v| v * factor).collect();
        let out = Tensor::raw(x.shape().to_vec(), v);
        self.record("scale", &[x], out, || Saved::Scale { factor })
    }

    pub fn neg(&mut self, x: &Tensor) -> Result<Tensor> {
        self.scale(x, -1.0)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let (m, c) = dims2("softmax_cross_entropy", logits)?;
        if targets.len() != m {
            return Err(mismatch(
                "softmax_cross_entropy",
                format!("{m} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(mismatch(
                "softmax_cross_entropy",
                format!("target {bad} out of {c} classes"),
            ));
        }
        let mut probs = Vec::with_capacity(m * c);
        let mut total = 0.0;
        for (row, &t) in logits.values().chunks(c).zip(targets) {
            let lse = logsumexp(row);
            total += lse - row[t];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::raw(vec![1], vec![total / m as f64]);
        self.record("softmax_cross_entropy", &[logits], out, || {
            Saved::SoftmaxCrossEntropy {
                probs,
                targets: targets.to_vec(),
                cols: c,
            }
        })
    }

    /// `mu + exp(logvar / 2) * noise`, elementwise.
    pub fn reparameterize(&mut self, mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Result<Tensor> {
        Self::same_shape("reparameterize", mu, logvar)?;
        Self::same_shape("reparameterize", mu, noise)?;
        let std: Vec<f64> = logvar.values().iter().map(|lv| (0.5 * lv).exp()).collect();
        if std.iter().any(|s| !s.is_finite()) {
            return Err(TensorError::NonFiniteValue { op: "reparameterize" });
        }
        let v = mu
            .values()
            .iter()
            .zip(&std)
            .zip(noise.values())
            .map(|((m, s), n)| m + s * n)
            .collect();
        let out = Tensor::raw(mu.shape().to_vec(), v);
        let noise_v = noise.values().to_vec();
        self.record("reparameterize", &[mu, logvar, noise], out, || {
            Saved::Reparameterize { std, noise: noise_v }
        })
    }

    /// Reverse sweep from a scalar `loss`, returning adjoints of `leaves`.
    pub fn backward(&self, loss: &Tensor, leaves: &[NodeId]) -> Result<GradientMap> {
        if !loss.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: loss.shape().to_vec(),
            });
        }
        let Some(root) = loss.node() else {
            return match leaves.first() {
                Some(&id) => Err(TensorError::UnreachableLeaf(id)),
                None => Ok(GradientMap::default()),
            };
        };
        for &id in leaves {
            match self.records.get(id) {
                Some(r) if matches!(r.saved, Saved::Leaf { .. }) => {}
                _ => return Err(TensorError::UnknownNode(id)),
            }
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adjoints[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let record = &self.records[id];
            if matches!(record.saved, Saved::Leaf { .. }) {
                continue;
            }
            let Some(g) = adjoints[id].take() else {
                continue;
            };
            let wants: Vec<bool> = record.inputs.iter().map(Option::is_some).collect();
            let grads = input_grads(&record.saved, &g, &wants);
            for (input, grad) in record.inputs.iter().zip(grads) {
                if let (Some(src), Some(grad)) = (input, grad) {
                    debug_assert_eq!(grad.len(), self.records[*src].numel);
                    match &mut adjoints[*src] {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(grad),
                    }
                }
            }
        }
        let mut out = GradientMap::default();
        for &id in leaves {
            let grad = adjoints
                .get_mut(id)
                .and_then(Option::take)
                .ok_or(TensorError::UnreachableLeaf(id))?;
            let Saved::Leaf { shape } = &self.records[id].saved else {
                unreachable!("checked above");
            };
            out.grads.insert(id, Tensor::raw(shape.clone(), grad));
        }
        Ok(out)
    }

    /// Like [`Tape::backward`] but with leaf tensors, reshaping each adjoint to
    /// its leaf's shape.
    pub fn grads_for(&self, loss: &Tensor, leaves: &[&Tensor]) -> Result<Vec<Tensor>> {
        let ids = leaves
            .iter()
            .map(|t| t.node().ok_or(TensorError::Detached))
            .collect::<Result<Vec<_>>>()?;
        let map = self.backward(loss, &ids)?;
        leaves
            .iter()
            .zip(&ids)
            .map(|(leaf, id)| {
                debug_assert_eq!(leaf.node(), Some(*id));
                Ok(map.get(*id).expect("present after backward").clone())
            })
            .collect()
    }
}

fn input_grads(saved: &Saved, g: &[f64], wants: &[bool]) -> Vec<Option<Vec<f64>>> {
    let want = |i: usize| wants.get(i).copied().unwrap_or(false);
    match saved {
        Saved::Leaf { .. } => Vec::new(),
        Saved::MatMul { a, b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let ga = want(0).then(|| matmul_nt(g, b.values(), m, n, k));
            let gb = want(1).then(|| matmul_tn(a.values(), g, m, k, n));
            vec![ga, gb]
        }
        Saved::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        Saved::Sub => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        Saved::Mul { a, b } => vec![
            want(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
            want(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
        ],
        Saved::AddRow { cols } => {
            let gb = want(1).then(|| {
                let mut acc = vec![0.0; *cols];
                for row in g.chunks(*cols) {
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                acc
            });
            vec![want(0).then(|| g.to_vec()), gb]
        }
        Saved::Relu { input } => vec![Some(
            g.iter()
                .zip(input)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect(),
        )],
        Saved::Tanh { out } => vec![Some(
            g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect(),
        )],
        Saved::Exp { out } => vec![Some(g.iter().zip(out).map(|(g, y)| g * y).collect())],
        Saved::Log { input } => vec![Some(g.iter().zip(input).map(|(g, x)| g / x).collect())],
        Saved::LogSumExpRows { softmax, cols } => vec![Some(
            softmax
                .chunks(*cols)
                .zip(g)
                .flat_map(|(p, gi)| p.iter().map(move |pj| gi * pj))
                .collect(),
        )],
        Saved::SumRows { cols } => vec![Some(
            g.iter()
                .flat_map(|gi| std::iter::repeat_n(*gi, *cols))
                .collect(),
        )],
        Saved::MeanRows { cols } => {
            let inv = 1.0 / *cols as f64;
            vec![Some(
                g.iter()
                    .flat_map(|gi| std::iter::repeat_n(gi * inv, *cols))
                    .collect(),
            )]
        }
        Saved::Sum { n } => vec![Some(vec![g[0]; *n])],
        Saved::Mean { n } => vec![Some(vec![g[0] / *n as f64; *n])],
        Saved::ConcatRows { sizes } => {
            let cols = g.len() / sizes.iter().sum::<usize>();
            let mut offset = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let part = &g[offset * cols..(offset + r) * cols];
                    offset += r;
                    want(i).then(|| part.to_vec())
                })
                .collect()
        }
        Saved::ConcatCols { widths, rows } => {
            let total: usize = widths.iter().sum();
            let mut offset = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let start = offset;
                    offset += w;
                    want(i).then(|| {
                        (0..*rows)
                            .flat_map(|r| g[r * total + start..r * total + start + w].iter().copied())
                            .collect()
                    })
                })
                .collect()
        }
        Saved::GatherRows {
            index,
            src_rows,
            cols,
        } => {
            let mut acc = vec![0.0; src_rows * cols];
            for (k, &i) in index.iter().enumerate() {
                let src = &g[k * cols..(k + 1) * cols];
                acc[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, v)| *a += v);
            }
            vec![Some(acc)]
        }
        Saved::SquaredNorm { input } => {
            vec![Some(input.iter().map(|x| 2.0 * g[0] * x).collect())]
        }
        Saved::Scale { factor } => vec![Some(g.iter().map(|v| v * factor).collect())],
        Saved::SoftmaxCrossEntropy {
            probs,
            targets,
            cols,
        } => {
            let scale = g[0] / targets.len() as f64;
            let mut out: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &t) in targets.iter().enumerate() {
                out[r * cols + t] -= scale;
            }
            vec![Some(out)]
        }
        Saved::Reparameterize { std, noise } => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| {
                g.iter()
                    .zip(std.iter().zip(noise))
                    .map(|(g, (s, n))| 0.5 * g * s * n)
                    .collect()
            }),
            want(2).then(|| g.iter().zip(std).map(|(g, s)| g * s).collect()),
        ],
    }
}
