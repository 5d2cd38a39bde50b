//! Seeded random streams. Every stochastic step in the crate draws from a
//! ChaCha8 stream derived from a run seed and a purpose tag, so results do
//! not depend on call order across unrelated components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Stream for `seed` specialised by a purpose tag and index.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniformly distributed direction on the unit sphere in `n` dimensions.
pub fn unit_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
