//! GIN encoder and MLP classification head.
//!
//! Each GIN layer computes `h_v <- MLP((1 + eps) h_v + sum_{u in N(v)} h_u)`
//! with a two-layer ReLU MLP; the graph embedding pools the final node
//! states by sum or mean.

mod checkpoint;
pub(crate) mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_load, checkpoint_save, checkpoint_to_bytes, Checkpoint,
    MODEL_MAGIC,
};
pub use train::{
    erm_loss, erm_step, evaluate, evaluate_all, train_erm, EpochRecord, TrainConfig, TrainOutput,
    TrainTrace,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, TensorError};
use crate::rng;
use crate::syngraph::Graph;

type TResult<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub eps: f64,
    pub readout: Readout,
}

/// Graph-level pooling of node states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
}

impl Readout {
    pub(crate) fn code(self) -> u32 {
        match self {
            Readout::Sum => 0,
            Readout::Mean => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Readout::Sum),
            1 => Some(Readout::Mean),
            _ => None,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            eps: 0.0,
            readout: Readout::default(),
        }
    }
}

/// `[fan_in, fan_out]` weight and `[1, fan_out]` bias, both drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let w = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("finite");
    let b = Tensor::new(vec![1, fan_out], draw(fan_out)).expect("finite");
    (w, b)
}

pub(crate) fn linear(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> TResult<Tensor> {
    let y = tape.matmul(x, w)?;
    tape.add_row(&y, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinLayer {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GinParams {
    pub layers: Vec<GinLayer>,
    pub eps: f64,
    pub readout: Readout,
}

impl GinParams {
    pub fn init(d_in: usize, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init/gin", 0);
        let layers = (0..cfg.layers)
            .map(|l| {
                let fan_in = if l == 0 { d_in } else { cfg.hidden };
                let (w1, b1) = init_linear(&mut rng, fan_in, cfg.hidden);
                let (w2, b2) = init_linear(&mut rng, cfg.hidden, cfg.hidden);
                GinLayer { w1, b1, w2, b2 }
            })
            .collect();
        Self {
            layers,
            eps: cfg.eps,
            readout: cfg.readout,
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].w1.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().unwrap().w2.shape()[1]
    }

    /// Rebuilds parameters from tensors in [`ParamSet::tensors`] order.
    pub fn from_tensors(tensors: Vec<Tensor>, eps: f64, readout: Readout) -> Option<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(4) {
            return None;
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        while let (Some(w1), Some(b1), Some(w2), Some(b2)) = (it.next(), it.next(), it.next(), it.next()) {
            layers.push(GinLayer { w1, b1, w2, b2 });
        }
        Some(Self { layers, eps, readout })
    }
}

impl ParamSet for GinParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w1, &l.b1, &l.w2, &l.b2])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2])
            .collect()
    }
}

/// Two-layer head `d_h -> d_h -> C`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpParams {
    pub fn init(hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init/mlp", 0);
        let (w1, b1) = init_linear(&mut rng, hidden, hidden);
        let (w2, b2) = init_linear(&mut rng, hidden, classes);
        Self { w1, b1, w2, b2 }
    }

    pub fn classes(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Option<Self> {
        let [w1, b1, w2, b2]: [Tensor; 4] = tensors.try_into().ok()?;
        Some(Self { w1, b1, w2, b2 })
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Encoder and head trained jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gin: GinParams,
    pub head: MlpParams,
}

impl Model {
    pub fn init(d_in: usize, classes: usize, cfg: &ModelConfig, seed: u64) -> Self {
        Self {
            gin: GinParams::init(d_in, cfg, seed),
            head: MlpParams::init(cfg.hidden, classes, seed),
        }
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// `[B, C]` logits for a batch of graphs.
    pub fn logits(&self, tape: &mut Tape, graphs: &[&Graph]) -> TResult<Tensor> {
        let h = embed_batch(tape, &self.gin, graphs)?;
        classify(tape, &self.head, &h)
    }

    /// Logits of one graph, evaluated without recording.
    pub fn logits_of(&self, g: &Graph) -> TResult<Vec<f64>> {
        Ok(self.logits(&mut Tape::inactive(), &[g])?.into_values())
    }

    pub fn embedding_of(&self, g: &Graph) -> TResult<Tensor> {
        gin_forward(&mut Tape::inactive(), &self.gin, g)
    }

    pub fn predict(&self, g: &Graph) -> TResult<usize> {
        Ok(argmax(&self.logits_of(g)?))
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.gin.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.gin.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// `[1, d_h]` graph embedding.
pub fn gin_forward(tape: &mut Tape, gin: &GinParams, g: &Graph) -> TResult<Tensor> {
    if g.d_in != gin.d_in() {
        return Err(TensorError::ShapeMismatch {
            op: "gin_forward",
            detail: format!("graph has {} features, encoder expects {}", g.d_in, gin.d_in()),
        });
    }
    let agg = g.aggregation_matrix(gin.eps);
    let mut h = g.features();
    for layer in &gin.layers {
        let mixed = tape.matmul(&agg, &h)?;
        let z = linear(tape, &mixed, &layer.w1, &layer.b1)?;
        let z = tape.relu(&z)?;
        let z = linear(tape, &z, &layer.w2, &layer.b2)?;
        h = tape.relu(&z)?;
    }
    let weight = match gin.readout {
        Readout::Sum => 1.0,
        Readout::Mean => 1.0 / g.n_nodes as f64,
    };
    let pool = Tensor::filled(&[1, g.n_nodes], weight);
    tape.matmul(&pool, &h)
}

/// `[B, d_h]` embeddings stacked in batch order.
pub fn embed_batch(tape: &mut Tape, gin: &GinParams, graphs: &[&Graph]) -> TResult<Tensor> {
    let rows = graphs
        .iter()
        .map(|g| gin_forward(tape, gin, g))
        .collect::<TResult<Vec<_>>>()?;
    let refs: Vec<&Tensor> = rows.iter().collect();
    tape.concat_rows(&refs)
}

/// Logits `[B, C]` for embeddings `[B, d_h]`.
pub fn classify(tape: &mut Tape, head: &MlpParams, h: &Tensor) -> TResult<Tensor> {
    let (_, width) = h.dims2()?;
    if width != head.width() {
        return Err(TensorError::ShapeMismatch {
            op: "classify",
            detail: format!("embedding width {width}, head expects {}", head.width()),
        });
    }
    let z = linear(tape, h, &head.w1, &head.b1)?;
    let z = tape.relu(&z)?;
    linear(tape, &z, &head.w2, &head.b2)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syngraph::{compose, BaseFamily, Motif};

    fn zero_params(gin: &mut GinParams) {
        for t in gin.tensors_mut() {
            t.values_mut().fill(0.0);
        }
    }

    #[test]
    fn isolated_zero_node_embeds_to_zero() {
        let g = Graph::new(1, [], vec![0.0; 4], 4, 0, 0).unwrap();
        let mut gin = GinParams::init(4, &ModelConfig::default(), 1);
        for l in &mut gin.layers {
            l.b1.values_mut().fill(0.0);
            l.b2.values_mut().fill(0.0);
        }
        let h = gin_forward(&mut Tape::inactive(), &gin, &g).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
        zero_params(&mut gin);
        let h = gin_forward(&mut Tape::inactive(), &gin, &g).unwrap();
        assert_eq!(h.shape(), &[1, 32]);
    }

    #[test]
    fn embedding_is_permutation_invariant() {
        let g = compose(BaseFamily::Tree, 9, Motif::House, 4, 8, 2).unwrap();
        let n = g.n_nodes;
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let p = g.permuted(&perm).unwrap();
        let gin = GinParams::init(8, &ModelConfig::default(), 3);
        let a = gin_forward(&mut Tape::inactive(), &gin, &g).unwrap();
        let b = gin_forward(&mut Tape::inactive(), &gin, &p).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    fn bare(family: BaseFamily) -> Graph {
        let (n, edges) = family.build(5);
        let feats = crate::syngraph::degree_features(n, &edges, 6);
        Graph::new(n, edges, feats, 6, 0, 0).unwrap()
    }

    #[test]
    fn path_and_star_embed_differently() {
        // identity-like weights: w1 = [I; 0], w2 = I, zero biases
        let cfg = ModelConfig {
            layers: 2,
            hidden: 6,
            eps: 0.0,
            readout: Readout::Sum,
        };
        let mut gin = GinParams::init(6, &cfg, 0);
        for l in &mut gin.layers {
            for (k, v) in l.w1.values_mut().iter_mut().enumerate() {
                *v = if k / 6 == k % 6 { 1.0 } else { 0.0 };
            }
            for (k, v) in l.w2.values_mut().iter_mut().enumerate() {
                *v = if k / 6 == k % 6 { 1.0 } else { 0.0 };
            }
            l.b1.values_mut().fill(0.0);
            l.b2.values_mut().fill(0.0);
        }
        let path = gin_forward(&mut Tape::inactive(), &gin, &bare(BaseFamily::Path)).unwrap();
        let star = gin_forward(&mut Tape::inactive(), &gin, &bare(BaseFamily::Star)).unwrap();
        // Hand evaluation: after two rounds of (A + I) the summed degree
        // channels differ (path: degrees 1,2,2,2,1; star: 4,1,1,1,1).
        assert_ne!(path.values(), star.values());
        // constant channel: sum over nodes of ((A+I)^2 1)_v = 1^T (A+I)^2 1
        assert_eq!(path.values()[5], 35.0);
        assert_eq!(star.values()[5], 41.0);
    }

    #[test]
    fn classify_zero_weights_returns_bias() {
        let mut head = MlpParams::init(4, 3, 0);
        head.w1.values_mut().fill(0.0);
        head.w2.values_mut().fill(0.0);
        head.b2 = Tensor::row(vec![0.5, -1.0, 2.0]).unwrap();
        let h = Tensor::zeros(&[1, 4]);
        let s = classify(&mut Tape::inactive(), &head, &h).unwrap();
        assert_eq!(s.values(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn bias_shift_keeps_argmax() {
        let head = MlpParams::init(4, 3, 5);
        let h = Tensor::row(vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let s = classify(&mut Tape::inactive(), &head, &h).unwrap();
        let mut shifted = head.clone();
        shifted.b2.values_mut().iter_mut().for_each(|v| *v += 3.7);
        let s2 = classify(&mut Tape::inactive(), &shifted, &h).unwrap();
        for (a, b) in s.values().iter().zip(s2.values()) {
            assert!((b - a - 3.7).abs() < 1e-12);
        }
        assert_eq!(argmax(s.values()), argmax(s2.values()));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn feature_width_mismatch() {
        let g = compose(BaseFamily::Path, 6, Motif::Cycle5, 0, 5, 0).unwrap();
        let gin = GinParams::init(8, &ModelConfig::default(), 0);
        assert!(matches!(
            gin_forward(&mut Tape::inactive(), &gin, &g),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
