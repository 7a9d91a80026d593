use thiserror::Error;

use crate::{corpus, encoder, eval, heads, risk, scoremodel, tensor, tuner};

/// Crate-level error. Each variant carries the failing module's own error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
    #[error(transparent)]
    Heads(#[from] heads::HeadsError),
    #[error(transparent)]
    ScoreModel(#[from] scoremodel::ScoreModelError),
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
    #[error(transparent)]
    Tuner(#[from] tuner::TunerError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{0}")]
    Cli(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Name of the module the error originated in.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Corpus(_) => "corpus",
            Error::Tensor(_) => "tensor",
            Error::Encoder(_) => "encoder",
            Error::Heads(_) => "heads",
            Error::ScoreModel(_) => "scoremodel",
            Error::Risk(_) => "risk",
            Error::Tuner(_) => "tuner",
            Error::Eval(_) => "eval",
            Error::Cli(_) => "cli",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
