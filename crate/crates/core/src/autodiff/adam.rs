use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// Fresh state sized for `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self, TensorError> {
        if !(config.lr > 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::StateMismatch(format!(
                "{} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.numel() != g.numel() || p.numel() != m.len() {
                return Err(TensorError::StateMismatch(format!(
                    "param of {} values, grad of {}, state of {}",
                    p.numel(),
                    g.numel(),
                    m.len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if p.values().iter().any(|w| !w.is_finite()) {
                return Err(TensorError::NonFiniteValue { op: "adam_step" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_fresh_params() {
        let mut p = Tensor::row(vec![1.0, -2.0]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(cfg(0.1), &[&p]).unwrap();
        adam.step(vec![&mut p], &[Tensor::zeros(&[1, 2])]).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut p = Tensor::row(vec![1.0]).unwrap();
        let mut adam = Adam::new(cfg(0.1), &[&p]).unwrap();
        adam.step(vec![&mut p], &[Tensor::row(vec![1.0]).unwrap()]).unwrap();
        let m1 = adam.first_moments()[0][0];
        adam.step(vec![&mut p], &[Tensor::zeros(&[1, 1])]).unwrap();
        assert_eq!(adam.first_moments()[0][0], 0.9 * m1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::row(vec![0.5]).unwrap();
        let mut adam = Adam::new(cfg(0.1), &[&p]).unwrap();
        adam.step(vec![&mut p], &[Tensor::row(vec![1.0]).unwrap()]).unwrap();
        // m_hat = 1, v_hat = 1 => delta = 0.1 / (1 + 1e-8)
        assert!((0.5 - p.values()[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut p = Tensor::row(vec![0.0]).unwrap();
        let mut adam = Adam::new(cfg(0.01), &[&p]).unwrap();
        let g = Tensor::row(vec![3.0]).unwrap();
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p.values()[0];
            adam.step(vec![&mut p], std::slice::from_ref(&g)).unwrap();
            last = before - p.values()[0];
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = Tensor::row(vec![0.0, 1.0]).unwrap();
        let mut adam = Adam::new(cfg(0.01), &[&p]).unwrap();
        let err = adam.step(vec![&mut p], &[Tensor::row(vec![1.0]).unwrap()]);
        assert!(matches!(err, Err(TensorError::StateMismatch(_))));
        assert!(Adam::new(cfg(0.0), &[]).is_err());
    }
}
