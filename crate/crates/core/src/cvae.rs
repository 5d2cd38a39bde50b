//! Conditional VAE over graph embeddings.
//!
//! The encoder maps `[H, onehot(y)]` to a diagonal Gaussian `(mu, logvar)`;
//! the decoder maps `[z, onehot(y)]` back to an embedding. Training uses a
//! unit-variance Gaussian likelihood (squared error) and a standard-normal
//! prior shared by all classes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape, Tensor, TensorError};
use crate::gnnmodel::{init_linear, linear};
use crate::rng;
use crate::Result;

type TResult<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvaeConfig {
    pub latent: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent: 16,
            hidden: 64,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeParams {
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub mu_w: Tensor,
    pub mu_b: Tensor,
    pub logvar_w: Tensor,
    pub logvar_b: Tensor,
    pub dec_w1: Tensor,
    pub dec_b1: Tensor,
    pub dec_w2: Tensor,
    pub dec_b2: Tensor,
}

impl CvaeParams {
    pub fn init(embed_dim: usize, classes: usize, cfg: &CvaeConfig, seed: u64) -> Self {
        assert!(cfg.latent < embed_dim, "latent width must be below the embedding width");
        let mut rng = rng::stream(seed, "init/cvae", 0);
        let (enc_w, enc_b) = init_linear(&mut rng, embed_dim + classes, cfg.hidden);
        let (mu_w, mu_b) = init_linear(&mut rng, cfg.hidden, cfg.latent);
        let (logvar_w, logvar_b) = init_linear(&mut rng, cfg.hidden, cfg.latent);
        let (dec_w1, dec_b1) = init_linear(&mut rng, cfg.latent + classes, cfg.hidden);
        let (dec_w2, dec_b2) = init_linear(&mut rng, cfg.hidden, embed_dim);
        Self {
            enc_w,
            enc_b,
            mu_w,
            mu_b,
            logvar_w,
            logvar_b,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
        }
    }

    pub fn latent(&self) -> usize {
        self.mu_w.shape()[1]
    }

    pub fn embed_dim(&self) -> usize {
        self.dec_w2.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.dec_w1.shape()[0] - self.latent()
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Option<Self> {
        let [enc_w, enc_b, mu_w, mu_b, logvar_w, logvar_b, dec_w1, dec_b1, dec_w2, dec_b2]: [Tensor; 10] =
            tensors.try_into().ok()?;
        Some(Self {
            enc_w,
            enc_b,
            mu_w,
            mu_b,
            logvar_w,
            logvar_b,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
        })
    }
}

impl ParamSet for CvaeParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.enc_w,
            &self.enc_b,
            &self.mu_w,
            &self.mu_b,
            &self.logvar_w,
            &self.logvar_b,
            &self.dec_w1,
            &self.dec_b1,
            &self.dec_w2,
            &self.dec_b2,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.mu_w,
            &mut self.mu_b,
            &mut self.logvar_w,
            &mut self.logvar_b,
            &mut self.dec_w1,
            &mut self.dec_b1,
            &mut self.dec_w2,
            &mut self.dec_b2,
        ]
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> TResult<Tensor> {
    let mut v = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(TensorError::InvalidArgument(format!(
                "class {y} out of {classes}"
            )));
        }
        v[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], v)
}

/// `(mu, logvar)`, each `[B, d_z]`, for embeddings `[B, d_h]`.
pub fn encode(tape: &mut Tape, p: &CvaeParams, h: &Tensor, y: &[usize]) -> TResult<(Tensor, Tensor)> {
    let cond = one_hot(y, p.classes())?;
    let x = tape.concat_cols(&[h, &cond])?;
    let hidden = linear(tape, &x, &p.enc_w, &p.enc_b)?;
    let hidden = tape.relu(&hidden)?;
    let mu = linear(tape, &hidden, &p.mu_w, &p.mu_b)?;
    let logvar = linear(tape, &hidden, &p.logvar_w, &p.logvar_b)?;
    Ok((mu, logvar))
}

pub fn reparameterize(tape: &mut Tape, mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> TResult<Tensor> {
    tape.reparameterize(mu, logvar, noise)
}

/// Decoded embeddings `[B, d_h]` for latents `[B, d_z]`.
pub fn decode(tape: &mut Tape, p: &CvaeParams, z: &Tensor, y: &[usize]) -> TResult<Tensor> {
    let cond = one_hot(y, p.classes())?;
    let x = tape.concat_cols(&[z, &cond])?;
    let hidden = linear(tape, &x, &p.dec_w1, &p.dec_b1)?;
    let hidden = tape.relu(&hidden)?;
    linear(tape, &hidden, &p.dec_w2, &p.dec_b2)
}

/// Closed-form `KL(N(mu, diag exp(logvar)) || N(0, I))` per row, summed
/// over the latent axis.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Negative ELBO averaged over the batch:
/// `||H_hat - H||^2 / d_h + 1/2 sum_j (mu_j^2 + exp(logvar_j) - 1 - logvar_j)`.
///
/// `h` must be detached from the encoder tape.
pub fn cvae_loss(tape: &mut Tape, p: &CvaeParams, h: &Tensor, y: &[usize], noise: &Tensor) -> TResult<Tensor> {
    let (batch, d_h) = h.dims2()?;
    let (mu, logvar) = encode(tape, p, h, y)?;
    let z = tape.reparameterize(&mu, &logvar, noise)?;
    let recon = decode(tape, p, &z, y)?;
    let diff = tape.sub(&recon, h)?;
    let rec = tape.squared_norm(&diff)?;
    let rec = tape.scale(&rec, 1.0 / (d_h * batch) as f64)?;
    let mu2 = tape.mul(&mu, &mu)?;
    let var = tape.exp(&logvar)?;
    let kl = tape.add(&mu2, &var)?;
    let kl = tape.sub(&kl, &logvar)?;
    let kl = tape.sum(&kl)?;
    let offset = Tensor::raw(vec![1], vec![-((batch * mu.shape()[1]) as f64)]);
    let kl = tape.add(&kl, &offset)?;
    let kl = tape.scale(&kl, 0.5 / batch as f64)?;
    tape.add(&rec, &kl)
}

/// One pass of cVAE updates over detached embeddings; returns the mean loss.
pub fn cvae_epoch(
    p: &mut CvaeParams,
    adam: &mut Adam,
    embeddings: &[Vec<f64>],
    labels: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let d_h = p.embed_dim();
    let mut order: Vec<usize> = (0..embeddings.len()).collect();
    order.shuffle(&mut rng::stream(seed, "cvae/shuffle", epoch as u64));
    let mut noise_rng = rng::stream(seed, "cvae/noise", epoch as u64);
    let mut total = 0.0;
    let mut batches = 0;
    for idx in order.chunks(batch_size.max(1)) {
        let h = Tensor::new(
            vec![idx.len(), d_h],
            idx.iter().flat_map(|&i| embeddings[i].iter().copied()).collect(),
        )?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let noise = Tensor::new(
            vec![idx.len(), p.latent()],
            rng::normal_vec(&mut noise_rng, idx.len() * p.latent()),
        )?;
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = cvae_loss(&mut tape, &bound, &h, &y, &noise)?;
        let grads = tape.grads_for(&loss, &bound.tensors())?;
        adam.step(p.tensors_mut(), &grads)?;
        total += loss.item()?;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Latent draws `z ~ N(0, I)` for `n` samples of class `y`.
pub fn prior_latents(latent: usize, n: usize, seed: u64, y: usize) -> TResult<Tensor> {
    let mut rng = rng::stream(seed, "cvae/prior", y as u64);
    Tensor::new(vec![n, latent], rng::normal_vec(&mut rng, n * latent))
}

/// `n` pseudo-ID embeddings decoded from the prior with condition `y`.
pub fn sample_pseudo_id(p: &CvaeParams, y: usize, n: usize, seed: u64) -> TResult<Tensor> {
    let z = prior_latents(p.latent(), n, seed, y)?;
    decode(&mut Tape::inactive(), p, &z, &vec![y; n])
}
