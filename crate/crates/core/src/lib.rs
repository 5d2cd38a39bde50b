//! Energy-guided latent augmentation for out-of-distribution graph
//! classification, together with loss-landscape diagnostics: classification
//! margin, energy score, local robustness radius and sharpness probes.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! - [`syngraph`]: the synthetic motif dataset with basis and size shifts.
//! - [`gnnmodel`]: GIN encoder, MLP head, ERM training and checkpoints.
//! - [`landscape`]: energy, margin, robust radius, Lipschitz and sharpness probes.
//! - [`cvae`]: conditional VAE over graph embeddings.
//! - [`pipeline`]: modeling, exploration and calibration stages plus ablations.
//! - [`harness`]: configuration, KDE, reports, timing and the CLI.

pub mod autodiff;
pub mod cvae;
pub mod envelope;
pub mod gnnmodel;
pub mod harness;
pub mod landscape;
pub mod pipeline;
pub mod rng;
pub mod syngraph;

mod error;

pub use error::{Error, Result};
