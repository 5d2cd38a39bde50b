//! Miniature motif dataset with structural distribution shift.
//!
//! Every graph is a base graph with one label-carrying motif attached by a
//! single bridge edge. Labels depend on the motif only; environments differ
//! either in the base family (basis shift) or in the base size (size shift).

mod io;
mod stats;

pub use io::{dataset_from_bytes, dataset_load, dataset_save, dataset_to_bytes, DATASET_MAGIC};
pub use stats::{graph_stats, GraphStats, SplitStats};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Basis,
    Size,
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftKind::Basis => "basis",
            ShiftKind::Size => "size",
        })
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basis" => Ok(ShiftKind::Basis),
            "size" => Ok(ShiftKind::Size),
            other => Err(Error::ConfigInvalid(format!("unknown shift kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::IdTest, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown split {s:?}")))
    }
}

/// Base-graph families. The discriminant doubles as the environment id
/// under basis shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseFamily {
    Path = 0,
    Star = 1,
    Tree = 2,
    Ladder = 3,
    Wheel = 4,
}

impl BaseFamily {
    pub const TRAIN: [BaseFamily; 3] = [BaseFamily::Path, BaseFamily::Star, BaseFamily::Tree];
    pub const OOD: [BaseFamily; 2] = [BaseFamily::Ladder, BaseFamily::Wheel];

    pub fn from_env(env_id: i64) -> Option<Self> {
        [
            BaseFamily::Path,
            BaseFamily::Star,
            BaseFamily::Tree,
            BaseFamily::Ladder,
            BaseFamily::Wheel,
        ]
        .into_iter()
        .find(|f| *f as i64 == env_id)
    }

    /// Undirected edges of a base graph with about `n` nodes. Returns the
    /// actual node count (ladders round down to an even count).
    pub fn build(self, n: usize) -> (usize, Vec<(usize, usize)>) {
        match self {
            BaseFamily::Path => (n, (0..n - 1).map(|i| (i, i + 1)).collect()),
            BaseFamily::Star => (n, (1..n).map(|i| (0, i)).collect()),
            BaseFamily::Tree => (n, (1..n).map(|i| ((i - 1) / 2, i)).collect()),
            BaseFamily::Ladder => {
                let k = n / 2;
                let mut e: Vec<_> = (0..k - 1).flat_map(|i| [(i, i + 1), (k + i, k + i + 1)]).collect();
                e.extend((0..k).map(|i| (i, k + i)));
                (2 * k, e)
            }
            BaseFamily::Wheel => {
                let rim = n - 1;
                let mut e: Vec<_> = (1..=rim).map(|i| (0, i)).collect();
                e.extend((1..=rim).map(|i| (i, i % rim + 1)));
                (n, e)
            }
        }
    }
}

/// Label-carrying motifs; the discriminant is the class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Motif {
    Cycle5 = 0,
    House = 1,
    Clique4 = 2,
}

impl Motif {
    pub const ALL: [Motif; 3] = [Motif::Cycle5, Motif::House, Motif::Clique4];

    pub fn class(self) -> usize {
        self as usize
    }

    pub fn build(self) -> (usize, Vec<(usize, usize)>) {
        match self {
            Motif::Cycle5 => (5, (0..5).map(|i| (i, (i + 1) % 5)).collect()),
            Motif::House => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
            Motif::Clique4 => (
                4,
                vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            ),
        }
    }
}

/// Attributed undirected graph with a class label and environment tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    /// Deduplicated `(i, j)` pairs with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Row-major `n_nodes x d_in`.
    pub node_features: Vec<f64>,
    pub d_in: usize,
    pub label: usize,
    pub env_id: i64,
}

impl Graph {
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_features: Vec<f64>,
        d_in: usize,
        label: usize,
        env_id: i64,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::ConfigInvalid(format!("self-loop at node {a}")));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::ConfigInvalid(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        if node_features.len() != n_nodes * d_in {
            return Err(Error::ConfigInvalid(format!(
                "{} feature values for {n_nodes} x {d_in}",
                node_features.len()
            )));
        }
        Ok(Self {
            n_nodes,
            edges: set.into_iter().collect(),
            node_features,
            d_in,
            label,
            env_id,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn features(&self) -> Tensor {
        Tensor::new(vec![self.n_nodes, self.d_in], self.node_features.clone())
            .expect("graph features are validated at construction")
    }

    /// Dense `A + (1 + eps) I`.
    pub fn aggregation_matrix(&self, eps: f64) -> Tensor {
        let n = self.n_nodes;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0 + eps;
        }
        for &(a, b) in &self.edges {
            m[a * n + b] += 1.0;
            m[b * n + a] += 1.0;
        }
        Tensor::new(vec![n, n], m).expect("finite by construction")
    }

    /// Same graph with node ids relabelled by `perm` (`new = perm[old]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut feats = vec![0.0; self.node_features.len()];
        for (old, &new) in perm.iter().enumerate() {
            feats[new * self.d_in..(new + 1) * self.d_in]
                .copy_from_slice(&self.node_features[old * self.d_in..(old + 1) * self.d_in]);
        }
        Graph::new(
            self.n_nodes,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
            feats,
            self.d_in,
            self.label,
            self.env_id,
        )
    }
}

/// Degree one-hot (clipped to the last degree slot) plus a constant channel.
pub fn degree_features(n_nodes: usize, edges: &[(usize, usize)], d_in: usize) -> Vec<f64> {
    let mut deg = vec![0usize; n_nodes];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let slots = d_in - 1;
    let mut out = vec![0.0; n_nodes * d_in];
    for (v, &d) in deg.iter().enumerate() {
        out[v * d_in + d.min(slots - 1)] = 1.0;
        out[v * d_in + slots] = 1.0;
    }
    out
}

/// Base graph plus motif joined by one bridge edge from base node
/// `anchor` to motif node 0.
pub fn compose(
    family: BaseFamily,
    base_size: usize,
    motif: Motif,
    anchor: usize,
    d_in: usize,
    env_id: i64,
) -> Result<Graph> {
    let (nb, mut edges) = family.build(base_size);
    let (nm, medges) = motif.build();
    edges.extend(medges.into_iter().map(|(a, b)| (a + nb, b + nb)));
    edges.push((anchor % nb, nb));
    let n = nb + nm;
    let feats = degree_features(n, &edges, d_in);
    Graph::new(n, edges, feats, d_in, motif.class(), env_id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub id_test: usize,
    pub ood_test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 100,
            val: 50,
            id_test: 50,
            ood_test: 50,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::IdTest => self.id_test,
            Split::OodTest => self.ood_test,
        }
    }
}

/// Inclusive base-size range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRange(pub usize, pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizeRanges {
    /// Base sizes for every split under basis shift.
    pub basis: SizeRange,
    pub size_train: SizeRange,
    pub size_val: SizeRange,
    pub size_ood: SizeRange,
}

impl Default for SizeRanges {
    fn default() -> Self {
        Self {
            basis: SizeRange(6, 12),
            size_train: SizeRange(6, 12),
            size_val: SizeRange(13, 18),
            size_ood: SizeRange(19, 30),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub shift: ShiftKind,
    pub classes: usize,
    pub d_in: usize,
    pub seed: u64,
    /// Graphs per class in each split.
    pub counts: SplitCounts,
    pub sizes: SizeRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            shift: ShiftKind::Size,
            classes: 3,
            d_in: 8,
            seed: 7,
            counts: SplitCounts::default(),
            sizes: SizeRanges::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.classes != 3 {
            return bad(format!("the motif task has 3 classes, got {}", self.classes));
        }
        if self.d_in < 3 {
            return bad(format!("d_in must be at least 3, got {}", self.d_in));
        }
        for split in Split::ALL {
            if self.counts.get(split) < 50 {
                return bad(format!(
                    "{split} needs at least 50 graphs per class, got {}",
                    self.counts.get(split)
                ));
            }
        }
        let s = &self.sizes;
        for (name, r) in [
            ("basis", s.basis),
            ("size_train", s.size_train),
            ("size_val", s.size_val),
            ("size_ood", s.size_ood),
        ] {
            if r.0 < 4 || r.0 > r.1 || r.1 > 200 {
                return bad(format!("{name} size range [{}, {}] invalid", r.0, r.1));
            }
        }
        if s.size_train.1 >= s.size_ood.0 {
            return bad(format!(
                "size shift needs disjoint ranges: train max {} >= ood min {}",
                s.size_train.1, s.size_ood.0
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub shift: ShiftKind,
    pub classes: usize,
    pub d_in: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub meta: DatasetMeta,
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub id_test: Vec<Graph>,
    pub ood_test: Vec<Graph>,
}

impl GraphDataset {
    pub fn split(&self, split: Split) -> &[Graph] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::IdTest => &self.id_test,
            Split::OodTest => &self.ood_test,
        }
    }

    pub(crate) fn split_mut(&mut self, split: Split) -> &mut Vec<Graph> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::IdTest => &mut self.id_test,
            Split::OodTest => &mut self.ood_test,
        }
    }
}

/// Environment of one generated graph.
fn draw_base(cfg: &DatasetConfig, split: Split, rng: &mut impl Rng) -> (BaseFamily, usize) {
    let pick = |r: SizeRange, rng: &mut dyn rand::RngCore| rng.random_range(r.0..=r.1);
    match cfg.shift {
        ShiftKind::Basis => {
            let families: &[BaseFamily] = match split {
                Split::OodTest => &BaseFamily::OOD,
                _ => &BaseFamily::TRAIN,
            };
            let family = *families.choose(rng).expect("non-empty");
            (family, pick(cfg.sizes.basis, rng))
        }
        ShiftKind::Size => {
            let range = match split {
                Split::Train | Split::IdTest => cfg.sizes.size_train,
                Split::Val => cfg.sizes.size_val,
                Split::OodTest => cfg.sizes.size_ood,
            };
            (BaseFamily::Path, pick(range, rng))
        }
    }
}

pub fn make_motif_dataset(cfg: &DatasetConfig) -> Result<GraphDataset> {
    cfg.validate()?;
    let mut ds = GraphDataset {
        meta: DatasetMeta {
            shift: cfg.shift,
            classes: cfg.classes,
            d_in: cfg.d_in,
            seed: cfg.seed,
        },
        train: Vec::new(),
        val: Vec::new(),
        id_test: Vec::new(),
        ood_test: Vec::new(),
    };
    for split in Split::ALL {
        let mut rng = rng::stream(cfg.seed, "syngraph", split as u64);
        let per_class = cfg.counts.get(split);
        let mut graphs = Vec::with_capacity(per_class * cfg.classes);
        for _ in 0..per_class {
            for motif in Motif::ALL {
                let (family, size) = draw_base(cfg, split, &mut rng);
                let anchor = rng.random_range(0..size);
                let env_id = match cfg.shift {
                    ShiftKind::Basis => family as i64,
                    ShiftKind::Size => size as i64,
                };
                graphs.push(compose(family, size, motif, anchor, cfg.d_in, env_id)?);
            }
        }
        graphs.shuffle(&mut rng);
        *ds.split_mut(split) = graphs;
    }
    Ok(ds)
}
