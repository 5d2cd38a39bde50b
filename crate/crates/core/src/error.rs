use thiserror::Error;

use crate::autodiff::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("margin gradient vanished (norm {norm:e}) at positive margin {margin}")]
    ZeroGradient { margin: f64, norm: f64 },
    #[error("degenerate model: input Lipschitz estimate {0:e} is zero")]
    DegenerateModel(f64),
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
