use std::path::{Path, PathBuf};

use serde::Serialize;

use super::kde::{kde, linspace, silverman_bandwidth, KdeCurve, ZERO_VARIANCE_BANDWIDTH};
use crate::gnnmodel::{checkpoint_load, Model};
use crate::landscape::{energy, radius_distribution, OracleConfig, RadiusMethod};
use crate::syngraph::{Graph, GraphDataset, Split};
use crate::{Error, Result};

/// Median with the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// KDEs of several samples on one shared grid that extends four (largest)
/// bandwidths beyond the pooled range.
pub fn kde_family(samples: &[&[f64]], points: usize) -> Result<Vec<KdeCurve>> {
    let mut hs = Vec::with_capacity(samples.len());
    for s in samples {
        let h = silverman_bandwidth(s)?;
        hs.push(if h > 0.0 { h } else { ZERO_VARIANCE_BANDWIDTH });
    }
    let h_max = hs.iter().copied().fold(0.0, f64::max);
    let all = samples.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let grid = linspace(lo - 4.0 * h_max, hi + 4.0 * h_max, points);
    samples.iter().map(|s| kde(s, &grid, None)).collect()
}

pub fn energies(model: &Model, graphs: &[Graph]) -> Result<Vec<f64>> {
    graphs.iter().map(|g| energy(&model.logits_of(g)?)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitEnergy {
    pub split: Split,
    pub mean: f64,
    pub curve: KdeCurve,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyShiftReport {
    pub splits: Vec<SplitEnergy>,
}

impl EnergyShiftReport {
    pub fn mean(&self, split: Split) -> f64 {
        self.splits.iter().find(|s| s.split == split).map_or(f64::NAN, |s| s.mean)
    }

    /// Mean energy strictly increases from train to val to ood_test.
    pub fn rises(&self) -> bool {
        self.mean(Split::Train) < self.mean(Split::Val) && self.mean(Split::Val) < self.mean(Split::OodTest)
    }
}

/// Energy density of every split under one model.
pub fn energy_shift_report(model: &Model, ds: &GraphDataset, points: usize) -> Result<EnergyShiftReport> {
    let per_split = Split::ALL
        .iter()
        .map(|&s| energies(model, ds.split(s)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = per_split.iter().map(Vec::as_slice).collect();
    let curves = kde_family(&refs, points)?;
    Ok(EnergyShiftReport {
        splits: Split::ALL
            .iter()
            .zip(per_split.iter().zip(curves))
            .map(|(&split, (e, curve))| SplitEnergy {
                split,
                mean: mean(e),
                curve,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusTracePoint {
    pub epoch: usize,
    pub median: f64,
    pub values: Vec<f64>,
    pub curve: KdeCurve,
}

#[derive(Clone, Debug, Serialize)]
pub struct RadiusTraceReport {
    pub method: RadiusMethod,
    pub points: Vec<RadiusTracePoint>,
}

impl RadiusTraceReport {
    pub fn medians(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.median).collect()
    }
}

/// Radii of every graph, one value per graph, misclassified ones at 0.
pub fn radii(model: &Model, graphs: &[Graph], method: RadiusMethod, oracle: &OracleConfig) -> Result<Vec<f64>> {
    Ok(radius_distribution(model, graphs, method, oracle)?
        .into_iter()
        .map(|d| d.radius.value)
        .collect())
}

/// Radius distributions along a sequence of checkpoints.
pub fn radius_trace(
    checkpoints: &[(usize, &Model)],
    graphs: &[Graph],
    method: RadiusMethod,
    oracle: &OracleConfig,
    points: usize,
) -> Result<RadiusTraceReport> {
    if checkpoints.len() < 2 {
        return Err(Error::MissingCheckpoint(format!(
            "a radius trace needs at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    let values = checkpoints
        .iter()
        .map(|(_, m)| radii(m, graphs, method, oracle))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
    let curves = kde_family(&refs, points)?;
    Ok(RadiusTraceReport {
        method,
        points: checkpoints
            .iter()
            .zip(values.into_iter().zip(curves))
            .map(|((epoch, _), (values, curve))| RadiusTracePoint {
                epoch: *epoch,
                median: median(&values),
                values,
                curve,
            })
            .collect(),
    })
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.e2am"))
}

/// Radius trace over the checkpoints stored in `dir` for `epochs`.
pub fn radius_trace_report(
    dir: &Path,
    epochs: &[usize],
    graphs: &[Graph],
    method: RadiusMethod,
    oracle: &OracleConfig,
    points: usize,
) -> Result<RadiusTraceReport> {
    let mut models = Vec::with_capacity(epochs.len());
    for &epoch in epochs {
        let path = checkpoint_path(dir, epoch);
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        models.push((epoch, checkpoint_load(&path)?.model));
    }
    let refs: Vec<(usize, &Model)> = models.iter().map(|(e, m)| (*e, m)).collect();
    radius_trace(&refs, graphs, method, oracle, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnnmodel::ModelConfig;
    use crate::syngraph::{make_motif_dataset, DatasetConfig, SplitCounts};

    fn small() -> GraphDataset {
        make_motif_dataset(&DatasetConfig {
            counts: SplitCounts {
                train: 50,
                val: 50,
                id_test: 50,
                ood_test: 50,
            },
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn shared_grid_curves_are_normalised() {
        let ds = small();
        let model = Model::init(ds.meta.d_in, 3, &ModelConfig::default(), 0);
        let report = energy_shift_report(&model, &ds, 400).unwrap();
        assert_eq!(report.splits.len(), 4);
        for s in &report.splits {
            assert!((0.98..=1.02).contains(&s.curve.integral()), "{:?}", s.split);
            assert_eq!(s.curve.grid, report.splits[0].curve.grid);
        }
    }

    #[test]
    fn repeated_checkpoint_gives_identical_curves() {
        let ds = small();
        let model = Model::init(ds.meta.d_in, 3, &ModelConfig::default(), 1);
        let graphs = &ds.ood_test[..30];
        let report = radius_trace(
            &[(1, &model), (1, &model)],
            graphs,
            RadiusMethod::MarginApprox,
            &OracleConfig::default(),
            64,
        )
        .unwrap();
        assert_eq!(report.points[0].curve, report.points[1].curve);
        assert_eq!(report.points[0].median, report.points[1].median);
    }

    #[test]
    fn missing_checkpoints_are_reported() {
        let ds = small();
        let model = Model::init(ds.meta.d_in, 3, &ModelConfig::default(), 1);
        let one = radius_trace(&[(1, &model)], &ds.ood_test, RadiusMethod::MarginApprox, &OracleConfig::default(), 8);
        assert!(matches!(one, Err(Error::MissingCheckpoint(_))));
        let dir = tempfile::tempdir().unwrap();
        let err = radius_trace_report(dir.path(), &[1, 2], &ds.ood_test, RadiusMethod::MarginApprox, &OracleConfig::default(), 8);
        assert!(matches!(err, Err(Error::MissingCheckpoint(_))));
    }
}
