use std::time::Instant;

use serde::Serialize;

use super::reports::median;
use crate::gnnmodel::Model;
use crate::pipeline::{run_variant, E2AConfig, Variant};
use crate::syngraph::{GraphDataset, Split};
use crate::Result;

/// Median training time per epoch and per full test pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub variant: Variant,
    /// Ascent steps and step size; zero for ERM.
    pub steps: usize,
    pub step_size: f64,
    pub train_ms: f64,
    pub infer_ms: f64,
}

/// Inference passes per model in each round.
const INFER_PASSES: usize = 25;

/// Time of one pass over id_test and ood_test.
fn inference_pass_ms(model: &Model, ds: &GraphDataset) -> Result<f64> {
    let started = Instant::now();
    for split in [Split::IdTest, Split::OodTest] {
        for g in ds.split(split) {
            std::hint::black_box(model.logits_of(g)?);
        }
    }
    Ok(started.elapsed().as_secs_f64() * 1e3)
}

/// Rounds are interleaved across the grid so slow drift in machine speed
/// lands on every row alike. Round 0 warms caches and the allocator and is
/// discarded.
fn measure(runs: &[(Variant, E2AConfig)], ds: &GraphDataset, rounds: usize) -> Result<Vec<(f64, f64)>> {
    let mut train = vec![Vec::with_capacity(rounds); runs.len()];
    let mut models = Vec::with_capacity(runs.len());
    for round in 0..=rounds {
        for (i, (variant, cfg)) in runs.iter().enumerate() {
            let out = run_variant(*variant, cfg, ds, &mut |_| Ok(()))?;
            if round > 0 {
                train[i].push(out.epoch_train_ms.iter().sum::<f64>() / out.epoch_train_ms.len() as f64);
            }
            if round == rounds {
                models.push(out.model);
            }
        }
    }
    // single passes are interleaved too, and the median is taken over
    // all of them
    let mut infer = vec![Vec::with_capacity(rounds * INFER_PASSES); runs.len()];
    for pass in 0..=rounds * INFER_PASSES {
        for (i, model) in models.iter().enumerate() {
            let ms = inference_pass_ms(model, ds)?;
            if pass > 0 {
                infer[i].push(ms);
            }
        }
    }
    Ok(train.iter().zip(&infer).map(|(t, i)| (median(t), median(i))).collect())
}

/// Times ERM and E2A at every `(steps, step_size)` of `grid`. Every
/// epoch of the E2A runs is a calibration epoch, so the numbers reflect
/// the full exploration and calibration cost.
pub fn bench_timing(
    base: &E2AConfig,
    ds: &GraphDataset,
    grid: &[(usize, f64)],
    epochs: usize,
    rounds: usize,
) -> Result<Vec<TimingRow>> {
    let mut cfg = *base;
    cfg.train.epochs = epochs;
    cfg.calibration_epochs = epochs;
    let mut runs = vec![(Variant::Erm, cfg)];
    for &(steps, step_size) in grid {
        let mut c = cfg;
        c.ascent_steps = steps;
        c.step_size = step_size;
        runs.push((Variant::Full, c));
    }
    let timings = measure(&runs, ds, rounds)?;
    Ok(runs
        .iter()
        .zip(timings)
        .map(|((variant, c), (train_ms, infer_ms))| {
            let erm = *variant == Variant::Erm;
            TimingRow {
                variant: *variant,
                steps: if erm { 0 } else { c.ascent_steps },
                step_size: if erm { 0.0 } else { c.step_size },
                train_ms,
                infer_ms,
            }
        })
        .collect())
}
