use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, Model};
use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape, Tensor, TensorError};
use crate::rng;
use crate::syngraph::{Graph, GraphDataset, Split};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub id_test_acc: f64,
    pub ood_test_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn at(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }

    /// Epoch with the highest OOD accuracy; ties go to the earliest epoch.
    pub fn ood_peak(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.ood_test_acc >= r.ood_test_acc => Some(b),
                _ => Some(r),
            })
    }
}

pub struct TrainOutput {
    pub model: Model,
    pub trace: TrainTrace,
    /// Parameters after every epoch, `(epoch, model)`.
    pub checkpoints: Vec<(usize, Model)>,
}

/// Mean cross-entropy of the batch under `model` (bind it first to get
/// parameter gradients).
pub fn erm_loss(tape: &mut Tape, model: &Model, batch: &[&Graph]) -> std::result::Result<Tensor, TensorError> {
    if batch.is_empty() {
        return Err(TensorError::InvalidArgument("empty batch".into()));
    }
    let logits = model.logits(tape, batch)?;
    let labels: Vec<usize> = batch.iter().map(|g| g.label).collect();
    tape.softmax_cross_entropy(&logits, &labels)
}

/// One Adam update of encoder and head on `batch`; returns the batch loss.
pub fn erm_step(model: &mut Model, adam: &mut Adam, batch: &[&Graph]) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let loss = erm_loss(&mut tape, &bound, batch)?;
    let grads = tape.grads_for(&loss, &bound.tensors())?;
    adam.step(model.tensors_mut(), &grads)?;
    Ok(loss.item()?)
}

/// Shuffled mini-batches of indices for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "erm/shuffle", epoch as u64));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One pass of ERM over the training split; returns the mean batch loss.
pub(crate) fn erm_epoch(
    model: &mut Model,
    adam: &mut Adam,
    train: &[Graph],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch);
    let mut total = 0.0;
    for idx in &batches {
        let batch: Vec<&Graph> = idx.iter().map(|&i| &train[i]).collect();
        total += erm_step(model, adam, &batch)?;
    }
    Ok(total / batches.len() as f64)
}

pub fn evaluate(model: &Model, graphs: &[Graph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::ConfigInvalid("cannot evaluate an empty split".into()));
    }
    let mut correct = 0usize;
    for g in graphs {
        if argmax(&model.logits_of(g)?) == g.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / graphs.len() as f64)
}

pub fn evaluate_all(model: &Model, ds: &GraphDataset, epoch: usize, train_loss: f64) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train_loss,
        train_acc: evaluate(model, ds.split(Split::Train))?,
        val_acc: evaluate(model, ds.split(Split::Val))?,
        id_test_acc: evaluate(model, ds.split(Split::IdTest))?,
        ood_test_acc: evaluate(model, ds.split(Split::OodTest))?,
    })
}

pub(crate) fn new_adam(model: &Model, cfg: &AdamConfig) -> Result<Adam> {
    Ok(Adam::new(*cfg, &model.tensors())?)
}

/// Plain empirical risk minimisation with shuffled mini-batch Adam.
pub fn train_erm(model: Model, ds: &GraphDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut model = model;
    let mut adam = new_adam(&model, &cfg.adam)?;
    let mut trace = TrainTrace::default();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let loss = erm_epoch(&mut model, &mut adam, &ds.train, cfg, epoch)?;
        trace.records.push(evaluate_all(&model, ds, epoch, loss)?);
        checkpoints.push((epoch, model.clone()));
    }
    Ok(TrainOutput {
        model,
        trace,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param_grad_check;
    use crate::gnnmodel::ModelConfig;
    use crate::syngraph::{make_motif_dataset, DatasetConfig, ShiftKind};

    fn small_ds() -> GraphDataset {
        make_motif_dataset(&DatasetConfig {
            shift: ShiftKind::Basis,
            seed: 7,
            counts: crate::syngraph::SplitCounts {
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
    fn uniform_logits_give_ln_c() {
        let mut tape = Tape::inactive();
        let logits = Tensor::zeros(&[4, 3]);
        let loss = tape.softmax_cross_entropy(&logits, &[0, 1, 2, 0]).unwrap();
        assert!((loss.item().unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut tape = Tape::inactive();
        let logits = Tensor::row(vec![60.0, 0.0, 0.0]).unwrap();
        let loss = tape.softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.item().unwrap() < 1e-20);
    }

    #[test]
    fn random_init_loss_near_ln3() {
        let ds = small_ds();
        let model = Model::init(8, 3, &ModelConfig::default(), 7);
        let batch: Vec<&Graph> = ds.train.iter().take(32).collect();
        let loss = erm_loss(&mut Tape::inactive(), &model, &batch).unwrap().item().unwrap();
        assert!((loss - 3f64.ln()).abs() < 0.2, "{loss}");
    }

    #[test]
    fn erm_loss_gradient_matches_finite_differences() {
        let ds = small_ds();
        let model = Model::init(8, 3, &ModelConfig::default(), 11);
        let batch: Vec<&Graph> = ds.train.iter().take(4).collect();
        let err = param_grad_check(&model, |tape, m| erm_loss(tape, m, &batch), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let ds = small_ds();
        let model = Model::init(8, 3, &ModelConfig::default(), 1);
        let out = train_erm(
            model.clone(),
            &ds,
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(out.model.bit_eq(&model));
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let ds = small_ds();
        let cfg = TrainConfig {
            epochs: 3,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            seed: 5,
            ..TrainConfig::default()
        };
        let init = Model::init(8, 3, &ModelConfig::default(), 5);
        let a = train_erm(init.clone(), &ds, &cfg).unwrap();
        let b = train_erm(init, &ds, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.model.bit_eq(&b.model));
        let epochs: Vec<usize> = a.trace.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
        assert_eq!(a.checkpoints.len(), 3);
        assert!(a.trace.records[2].train_loss < a.trace.records[0].train_loss);
    }

    #[test]
    fn evaluate_counts_correct_predictions() {
        let ds = small_ds();
        let mut model = Model::init(8, 3, &ModelConfig::default(), 1);
        // constant class-0 predictor
        model.head.w2.values_mut().fill(0.0);
        model.head.b2 = Tensor::row(vec![1.0, 0.0, 0.0]).unwrap();
        let acc = evaluate(&model, &ds.train).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
        assert!(evaluate(&model, &[]).is_err());
    }

    #[test]
    fn ood_peak_prefers_earliest() {
        let rec = |epoch, ood| EpochRecord {
            epoch,
            train_loss: 0.0,
            train_acc: 0.0,
            val_acc: 0.0,
            id_test_acc: 0.0,
            ood_test_acc: ood,
        };
        let trace = TrainTrace {
            records: vec![rec(1, 0.2), rec(2, 0.5), rec(3, 0.5), rec(4, 0.1)],
        };
        assert_eq!(trace.ood_peak().unwrap().epoch, 2);
    }
}
