use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid unlearning request: {0}")]
    Request(String),

    #[error("unknown identity {0} (no embedding row)")]
    UnknownIdentity(u32),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error(
        "meta-training aborted at epoch {epoch}, request {request} (seed {seed}, identities {identities:?}): {message}"
    )]
    MetaTrain { epoch: usize, request: usize, seed: u64, identities: Vec<u32>, message: String },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("artifact {path} does not match its recorded hash")]
    ArtifactMismatch { path: PathBuf },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
