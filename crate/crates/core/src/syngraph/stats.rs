use std::collections::BTreeMap;

use serde::Serialize;

use super::{GraphDataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitStats {
    pub split: String,
    pub count: usize,
    /// Node count -> number of graphs.
    pub size_histogram: BTreeMap<usize, usize>,
    pub label_histogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub splits: Vec<SplitStats>,
}

impl GraphStats {
    pub fn split(&self, split: Split) -> &SplitStats {
        self.splits
            .iter()
            .find(|s| s.split == split.name())
            .expect("every split is summarised")
    }
}

pub fn graph_stats(ds: &GraphDataset) -> GraphStats {
    let splits = Split::ALL
        .into_iter()
        .map(|split| {
            let graphs = ds.split(split);
            let mut size_histogram = BTreeMap::new();
            let mut label_histogram = vec![0; ds.meta.classes];
            for g in graphs {
                *size_histogram.entry(g.n_nodes).or_default() += 1;
                if g.label < label_histogram.len() {
                    label_histogram[g.label] += 1;
                }
            }
            SplitStats {
                split: split.name().to_owned(),
                count: graphs.len(),
                size_histogram,
                label_histogram,
            }
        })
        .collect();
    GraphStats { splits }
}
