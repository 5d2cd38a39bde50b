use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::landscape::LogitMap;

type TResult<T> = std::result::Result<T, TensorError>;

/// How ID and pseudo-OOD energies are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyPairing {
    /// `(mean e_ood - mean e_id)^2`.
    #[default]
    Mean,
    /// `mean_i (e_ood_i - e_id_i)^2` over the first `min(B, P)` rows.
    PerPair,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationLoss {
    pub lambda: f64,
    pub energy_term: bool,
    pub pairing: EnergyPairing,
}

impl CalibrationLoss {
    /// Energy alignment plus `lambda` times the cross-entropy of the pseudo
    /// embeddings against their conditioning classes. `h_pood` must not be
    /// linked to any tape.
    pub fn eval(
        &self,
        tape: &mut Tape,
        head: &impl LogitMap,
        h_id: &Tensor,
        h_pood: &Tensor,
        y_pood: &[usize],
    ) -> TResult<Tensor> {
        if h_pood.node().is_some() {
            return Err(TensorError::InvalidArgument(
                "pseudo embeddings must be detached".into(),
            ));
        }
        let s_pood = head.logits(tape, h_pood)?;
        let mut loss = None;
        if self.energy_term {
            let s_id = head.logits(tape, h_id)?;
            let e_id = tape.logsumexp_rows(&s_id)?;
            let e_id = tape.neg(&e_id)?;
            let e_ood = tape.logsumexp_rows(&s_pood)?;
            let e_ood = tape.neg(&e_ood)?;
            let term = match self.pairing {
                EnergyPairing::Mean => {
                    let a = tape.mean(&e_ood)?;
                    let b = tape.mean(&e_id)?;
                    let d = tape.sub(&a, &b)?;
                    tape.mul(&d, &d)?
                }
                EnergyPairing::PerPair => {
                    let n = e_id.shape()[0].min(e_ood.shape()[0]);
                    let idx: Vec<usize> = (0..n).collect();
                    let a = tape.gather_rows(&e_ood, &idx)?;
                    let b = tape.gather_rows(&e_id, &idx)?;
                    let d = tape.sub(&a, &b)?;
                    let sq = tape.squared_norm(&d)?;
                    tape.scale(&sq, 1.0 / n as f64)?
                }
            };
            loss = Some(term);
        }
        if self.lambda > 0.0 || loss.is_none() {
            let ce = tape.softmax_cross_entropy(&s_pood, y_pood)?;
            let ce = tape.scale(&ce, self.lambda)?;
            loss = Some(match loss {
                Some(l) => tape.add(&l, &ce)?,
                None => ce,
            });
        }
        Ok(loss.expect("at least one term"))
    }
}

/// Calibration loss with mean pairing and both terms.
pub fn calibration_loss(
    tape: &mut Tape,
    head: &impl LogitMap,
    h_id: &Tensor,
    h_pood: &Tensor,
    y_pood: &[usize],
    lambda: f64,
) -> TResult<Tensor> {
    CalibrationLoss {
        lambda,
        energy_term: true,
        pairing: EnergyPairing::Mean,
    }
    .eval(tape, head, h_id, h_pood, y_pood)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, param_grad_check, ParamSet};
    use crate::gnnmodel::MlpParams;
    use crate::landscape::{energy, AffineHead};
    use crate::rng;

    fn rows(seed: u64, n: usize, d: usize) -> Tensor {
        let mut r = rng::stream(seed, "test", 0);
        Tensor::new(vec![n, d], rng::normal_vec(&mut r, n * d)).unwrap()
    }

    fn mean_energy(head: &MlpParams, h: &Tensor) -> f64 {
        let (n, _) = h.dims2().unwrap();
        (0..n).map(|i| energy(&head.logits_of(h.row_slice(i)).unwrap()).unwrap()).sum::<f64>() / n as f64
    }

    #[test]
    fn without_ce_it_is_the_squared_energy_gap() {
        let head = MlpParams::init(4, 3, 1);
        let (h_id, h_pood) = (rows(1, 5, 4), rows(2, 6, 4));
        let loss = calibration_loss(&mut Tape::inactive(), &head, &h_id, &h_pood, &[0, 1, 2, 0, 1, 2], 0.0).unwrap();
        let gap = mean_energy(&head, &h_pood) - mean_energy(&head, &h_id);
        assert!((loss.item().unwrap() - gap * gap).abs() < 1e-12);
    }

    #[test]
    fn matched_energies_and_confident_pseudo_labels_give_zero() {
        let head = AffineHead {
            w: Tensor::new(vec![2, 2], vec![80.0, 0.0, 0.0, 80.0]).unwrap(),
            b: Tensor::row(vec![0.0, 0.0]).unwrap(),
        };
        let h = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = calibration_loss(&mut Tape::inactive(), &head, &h, &h, &[0, 1], 0.1).unwrap();
        assert!(loss.item().unwrap() < 1e-30);
    }

    #[test]
    fn rejects_linked_pseudo_embeddings() {
        let head = MlpParams::init(4, 3, 1);
        let mut tape = Tape::new();
        let h = tape.leaf(&rows(1, 3, 4));
        let err = calibration_loss(&mut tape, &head, &h, &h, &[0, 1, 2], 0.1).unwrap_err();
        assert!(matches!(err, TensorError::InvalidArgument(_)));
    }

    #[test]
    fn per_pair_matches_hand_computation() {
        let head = MlpParams::init(4, 3, 5);
        let (h_id, h_pood) = (rows(3, 4, 4), rows(4, 3, 4));
        let calib = CalibrationLoss {
            lambda: 0.0,
            energy_term: true,
            pairing: EnergyPairing::PerPair,
        };
        let loss = calib.eval(&mut Tape::inactive(), &head, &h_id, &h_pood, &[0, 1, 2]).unwrap();
        let e = |h: &Tensor, i| energy(&head.logits_of(h.row_slice(i)).unwrap()).unwrap();
        let want = (0..3).map(|i| (e(&h_pood, i) - e(&h_id, i)).powi(2)).sum::<f64>() / 3.0;
        assert!((loss.item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_wrt_head_matches_finite_differences() {
        let head = MlpParams::init(4, 3, 2);
        let (h_id, h_pood) = (rows(5, 6, 4), rows(6, 6, 4));
        let y = [0, 1, 2, 0, 1, 2];
        for pairing in [EnergyPairing::Mean, EnergyPairing::PerPair] {
            let calib = CalibrationLoss {
                lambda: 0.1,
                energy_term: true,
                pairing,
            };
            let err = param_grad_check(
                &head,
                |tape, p: &MlpParams| calib.eval(tape, p, &h_id, &h_pood, &y),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{pairing:?}: {err}");
        }
        // ID branch
        let err = finite_diff_check(
            |tape, h| calibration_loss(tape, &head, h, &h_pood, &y, 0.1),
            &h_id,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
        assert_eq!(head.num_values(), 4 * 4 + 4 + 4 * 3 + 3);
    }
}
