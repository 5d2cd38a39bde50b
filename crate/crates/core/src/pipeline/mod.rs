//! Energy-guided dual-stage augmentation.
//!
//! Every epoch runs an ERM pass over the training split and a cVAE pass over
//! the (detached) training embeddings. During the last `calibration_epochs`
//! epochs each training batch is paired with a class-balanced batch of prior
//! latents, pushed uphill in energy through the frozen decoder and head and
//! decoded into pseudo-OOD embeddings; the batch update then minimises the
//! cross-entropy on the real batch plus the calibration loss, which pulls
//! the pseudo-OOD energy back to the ID level and keeps each pseudo
//! embedding on the side of its conditioning class.

mod calibrate;
mod explore;

pub use calibrate::{calibration_loss, CalibrationLoss, EnergyPairing};
pub use explore::{explore, EnergyTrace, LatentDecoder};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamSet, Tape, Tensor};
use crate::cvae::{cvae_epoch, CvaeConfig, CvaeParams};
use crate::gnnmodel::train::{epoch_batches, erm_epoch, evaluate, new_adam};
use crate::gnnmodel::{argmax, classify, embed_batch, EpochRecord, Model, ModelConfig, TrainConfig, TrainTrace};
use crate::landscape::{energy, LogitMap};
use crate::rng;
use crate::syngraph::{Graph, GraphDataset, Split};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct E2AConfig {
    pub model: ModelConfig,
    pub cvae: CvaeConfig,
    /// `epochs` is the total epoch count; `seed` drives every stream.
    pub train: TrainConfig,
    pub calibration_epochs: usize,
    pub ascent_steps: usize,
    pub step_size: f64,
    pub lambda: f64,
    /// Reserved second coefficient; not used by the loss.
    pub lambda2: f64,
    /// Pseudo-OOD items per calibration step; 0 means the training batch size.
    pub pseudo_batch: usize,
    /// Let the calibration loss reach the encoder through its ID branch.
    pub calibrate_theta: bool,
    pub pairing: EnergyPairing,
}

impl Default for E2AConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            cvae: CvaeConfig::default(),
            train: TrainConfig::default(),
            calibration_epochs: 20,
            ascent_steps: 5,
            step_size: 0.1,
            lambda: 0.1,
            lambda2: 0.01,
            pseudo_batch: 0,
            calibrate_theta: true,
            pairing: EnergyPairing::Mean,
        }
    }
}

impl E2AConfig {
    /// `calibration_epochs = 0` is accepted and reduces the run to ERM plus
    /// an idle cVAE.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.calibration_epochs > self.train.epochs {
            return bad(format!(
                "calibration_epochs ({}) exceeds epochs ({})",
                self.calibration_epochs, self.train.epochs
            ));
        }
        if self.ascent_steps == 0 {
            return bad("ascent_steps must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 must be non-negative, got {}", self.lambda2));
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.cvae.latent == 0 || self.cvae.latent >= self.model.hidden {
            return bad(format!(
                "cvae latent width {} must be in 1..{}",
                self.cvae.latent, self.model.hidden
            ));
        }
        Ok(())
    }

    pub fn pseudo_batch_size(&self) -> usize {
        if self.pseudo_batch == 0 {
            self.train.batch_size
        } else {
            self.pseudo_batch
        }
    }

    pub fn is_calibration_epoch(&self, epoch: usize) -> bool {
        self.train.epochs - epoch < self.calibration_epochs
    }
}

/// Training variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Erm,
    /// Energy ascent applied directly to the encoder's embeddings.
    SamStar,
    NoEnergy,
    NoCe,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Erm, Variant::SamStar, Variant::NoEnergy, Variant::NoCe, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Erm => "erm",
            Variant::SamStar => "sam_star",
            Variant::NoEnergy => "no_energy",
            Variant::NoCe => "no_ce",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub erm: f64,
    pub cvae: f64,
    pub calibration: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub val: f64,
    pub id_test: f64,
    pub ood_test: f64,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `"erm"` or `"calibration"`.
    pub phase: String,
    pub epoch: usize,
    pub seed: u64,
    pub losses: Losses,
    pub accuracies: Accuracies,
    /// Mean energy of the training embeddings at the end of the epoch.
    pub mean_energy_id: f64,
    /// Mean energy of the explored pseudo-OOD embeddings of this epoch.
    pub mean_energy_pood: Option<f64>,
    /// Mean energy gain of exploration over this epoch's pseudo batches.
    pub delta_e: Option<f64>,
    /// `|e_pood - e_id|` on a fixed held-out pseudo batch after the epoch.
    pub heldout_gap: Option<f64>,
}

/// Snapshot handed to the per-epoch observer.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub model: &'a Model,
    pub cvae: &'a CvaeParams,
    pub metrics: &'a MetricsRecord,
}

pub struct RunOutput {
    pub model: Model,
    pub cvae: CvaeParams,
    pub trace: TrainTrace,
    pub metrics: Vec<MetricsRecord>,
    pub checkpoints: Vec<(usize, Model)>,
    /// Wall-clock milliseconds of the update work of each epoch (ERM,
    /// calibration and cVAE passes). Evaluation and the post-epoch
    /// embedding pass every variant makes are excluded.
    pub epoch_train_ms: Vec<f64>,
}

/// Full method with default observers.
pub fn run_e2a(cfg: &E2AConfig, ds: &GraphDataset) -> Result<RunOutput> {
    run_variant(Variant::Full, cfg, ds, &mut |_| Ok(()))
}

/// Runs `variant`, calling `observe` after every epoch (before the next one
/// starts). An observer error aborts the run.
pub fn run_variant(
    variant: Variant,
    cfg: &E2AConfig,
    ds: &GraphDataset,
    observe: &mut dyn FnMut(&EpochEvent<'_>) -> Result<()>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let (d_in, classes) = (ds.meta.d_in, ds.meta.classes);
    let seed = cfg.train.seed;
    let mut model = Model::init(d_in, classes, &cfg.model, seed);
    let mut cvae = CvaeParams::init(cfg.model.hidden, classes, &cfg.cvae, seed);
    let mut adam = new_adam(&model, &cfg.train.adam)?;
    let mut cvae_adam = Adam::new(cfg.cvae.adam, &cvae.tensors())?;
    let train_labels: Vec<usize> = ds.train.iter().map(|g| g.label).collect();
    let calibrating = variant != Variant::Erm && cfg.calibration_epochs > 0;
    let calib_loss = CalibrationLoss {
        lambda: if variant == Variant::NoCe { 0.0 } else { cfg.lambda },
        energy_term: variant != Variant::NoEnergy,
        pairing: cfg.pairing,
    };

    let mut trace = TrainTrace::default();
    let mut metrics = Vec::with_capacity(cfg.train.epochs);
    let mut checkpoints = Vec::with_capacity(cfg.train.epochs);
    let mut epoch_train_ms = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        let in_calibration = calibrating && cfg.is_calibration_epoch(epoch);
        let mut calib = None;
        let erm_loss = if in_calibration {
            let summary = calibration_epoch(variant, cfg, &calib_loss, &mut model, &mut adam, &cvae, ds, epoch)?;
            let ce = summary.ce;
            calib = Some(summary);
            ce
        } else {
            erm_epoch(&mut model, &mut adam, &ds.train, &cfg.train, epoch)?
        };
        let mut update_ms = started.elapsed().as_secs_f64() * 1e3;
        // every variant embeds the training split here for its epoch
        // metrics, so the pass is left out of the update time
        let h_train = embed_graphs(&model, &ds.train)?;
        // plain ERM has no use for the generator
        let cvae_loss = if variant == Variant::Erm {
            0.0
        } else {
            let started = Instant::now();
            let loss = cvae_epoch(
                &mut cvae,
                &mut cvae_adam,
                &h_train,
                &train_labels,
                cfg.train.batch_size,
                seed,
                epoch,
            )?;
            update_ms += started.elapsed().as_secs_f64() * 1e3;
            loss
        };
        epoch_train_ms.push(update_ms);

        let mut correct = 0usize;
        let mut energy_sum = 0.0;
        for (h, &y) in h_train.iter().zip(&train_labels) {
            let s = model.head.logits_of(h)?;
            correct += (argmax(&s) == y) as usize;
            energy_sum += energy(&s)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: erm_loss,
            train_acc: correct as f64 / ds.train.len() as f64,
            val_acc: evaluate(&model, ds.split(Split::Val))?,
            id_test_acc: evaluate(&model, ds.split(Split::IdTest))?,
            ood_test_acc: evaluate(&model, ds.split(Split::OodTest))?,
        };
        let mean_energy_id = energy_sum / ds.train.len() as f64;
        let heldout_gap = if in_calibration {
            Some((heldout_pood_energy(&model, &cvae, cfg)? - mean_energy_id).abs())
        } else {
            None
        };
        let m = MetricsRecord {
            phase: if in_calibration { "calibration" } else { "erm" }.to_string(),
            epoch,
            seed,
            losses: Losses {
                erm: erm_loss,
                cvae: cvae_loss,
                calibration: calib.as_ref().map(|c| c.loss),
            },
            accuracies: Accuracies {
                train: record.train_acc,
                val: record.val_acc,
                id_test: record.id_test_acc,
                ood_test: record.ood_test_acc,
            },
            mean_energy_id,
            mean_energy_pood: calib.as_ref().map(|c| c.mean_energy_pood),
            delta_e: calib.as_ref().map(|c| c.delta_e),
            heldout_gap,
        };
        observe(&EpochEvent {
            epoch,
            model: &model,
            cvae: &cvae,
            metrics: &m,
        })?;
        trace.records.push(record);
        metrics.push(m);
        checkpoints.push((epoch, model.clone()));
    }
    Ok(RunOutput {
        model,
        cvae,
        trace,
        metrics,
        checkpoints,
        epoch_train_ms,
    })
}

/// Final accuracies of one variant run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub id_acc: f64,
    pub ood_acc: f64,
}

pub fn ablate(variant: &str, cfg: &E2AConfig, ds: &GraphDataset) -> Result<AblationRow> {
    let variant: Variant = variant.parse()?;
    let out = run_variant(variant, cfg, ds, &mut |_| Ok(()))?;
    let last = out.trace.last().ok_or_else(|| Error::ConfigInvalid("run has no epochs".into()))?;
    Ok(AblationRow {
        variant,
        seed: cfg.train.seed,
        id_acc: last.id_test_acc,
        ood_acc: last.ood_test_acc,
    })
}

/// Embeddings of `graphs` under the current encoder, one row per graph.
pub fn embed_graphs(model: &Model, graphs: &[Graph]) -> Result<Vec<Vec<f64>>> {
    graphs
        .iter()
        .map(|g| Ok(model.embedding_of(g)?.into_values()))
        .collect()
}

/// Class-balanced conditions `0, 1, ..., C-1, 0, 1, ...`.
pub fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

/// Latents drawn from the prior for the given stream index.
fn draw_latents(latent: usize, n: usize, seed: u64, tag: &str, index: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, tag, index);
    Ok(Tensor::new(vec![n, latent], rng::normal_vec(&mut r, n * latent))?)
}

/// Pseudo-OOD embeddings: prior latents explored and decoded.
pub fn pseudo_ood(
    cvae: &CvaeParams,
    head: &impl LogitMap,
    y: &[usize],
    z0: &Tensor,
    steps: usize,
    eta: f64,
) -> Result<(Tensor, Vec<EnergyTrace>)> {
    let (z, traces) = explore(cvae, head, y, z0, steps, eta)?;
    let h = cvae.decode(&mut Tape::inactive(), &z, y)?;
    Ok((h, traces))
}

/// Mean energy of explored pseudo embeddings from a fixed latent batch.
fn heldout_pood_energy(model: &Model, cvae: &CvaeParams, cfg: &E2AConfig) -> Result<f64> {
    let n = cfg.pseudo_batch_size() * model.classes();
    let y = balanced_labels(n, model.classes());
    let z0 = draw_latents(cvae.latent(), n, cfg.train.seed, "e2a/heldout", 0)?;
    let (_, traces) = explore(cvae, &model.head, &y, &z0, cfg.ascent_steps, cfg.step_size)?;
    Ok(traces.iter().map(|t| *t.energies.last().unwrap()).sum::<f64>() / n as f64)
}

struct CalibrationSummary {
    ce: f64,
    loss: f64,
    mean_energy_pood: f64,
    delta_e: f64,
}

/// ERM pass in which every batch update also carries the calibration loss
/// on a fresh pseudo-OOD batch.
#[allow(clippy::too_many_arguments)]
fn calibration_epoch(
    variant: Variant,
    cfg: &E2AConfig,
    calib: &CalibrationLoss,
    model: &mut Model,
    adam: &mut Adam,
    cvae: &CvaeParams,
    ds: &GraphDataset,
    epoch: usize,
) -> Result<CalibrationSummary> {
    let seed = cfg.train.seed;
    let classes = model.classes();
    let batches = epoch_batches(ds.train.len(), cfg.train.batch_size, seed, epoch);
    let n_pseudo = cfg.pseudo_batch_size();
    let (mut ce_sum, mut loss_sum, mut e_sum, mut de_sum, mut n_traces) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (b, idx) in batches.iter().enumerate() {
        let batch: Vec<&Graph> = idx.iter().map(|&i| &ds.train[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|g| g.label).collect();
        let (h_pood, y_pood, traces) = match variant {
            Variant::SamStar => {
                let h = embed_batch(&mut Tape::inactive(), &model.gin, &batch)?;
                let (h, traces) = explore(&Identity, &model.head, &labels, &h, cfg.ascent_steps, cfg.step_size)?;
                (h, labels.clone(), traces)
            }
            _ => {
                let y = balanced_labels(n_pseudo, classes);
                let stream = (epoch as u64) << 32 | b as u64;
                let z0 = draw_latents(cvae.latent(), n_pseudo, seed, "e2a/z0", stream)?;
                let (h, traces) = pseudo_ood(cvae, &model.head, &y, &z0, cfg.ascent_steps, cfg.step_size)?;
                (h, y, traces)
            }
        };
        for t in &traces {
            e_sum += t.energies.last().unwrap();
            de_sum += t.delta();
        }
        n_traces += traces.len();

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let h = embed_batch(&mut tape, &bound.gin, &batch)?;
        let logits = classify(&mut tape, &bound.head, &h)?;
        let ce = tape.softmax_cross_entropy(&logits, &labels)?;
        let h_id = if cfg.calibrate_theta { h } else { h.detach() };
        let adv = calib.eval(&mut tape, &bound.head, &h_id, &h_pood, &y_pood)?;
        let loss = tape.add(&ce, &adv)?;
        let grads = tape.grads_for(&loss, &bound.tensors())?;
        adam.step(model.tensors_mut(), &grads)?;
        ce_sum += ce.item()?;
        loss_sum += adv.item()?;
    }
    let n = batches.len() as f64;
    Ok(CalibrationSummary {
        ce: ce_sum / n,
        loss: loss_sum / n,
        mean_energy_pood: e_sum / n_traces as f64,
        delta_e: de_sum / n_traces as f64,
    })
}

/// Treats embeddings as their own latents, for ascent directly on `H`.
struct Identity;

impl LatentDecoder for Identity {
    fn decode(&self, _: &mut Tape, z: &Tensor, _: &[usize]) -> std::result::Result<Tensor, crate::autodiff::TensorError> {
        Ok(z.clone())
    }
}
