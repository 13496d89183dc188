use std::path::PathBuf;

use crate::data::{RelationId, Split};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty class set")]
    EmptyClassSet,

    #[error("oracle evaluation failed at coordinate {coordinate}")]
    OracleEvaluationFailed { coordinate: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{split} split has {available} relations, episode needs {needed}")]
    InsufficientRelations {
        split: Split,
        needed: usize,
        available: usize,
    },

    #[error("relation {relation} has {available} instances, episode needs {needed}")]
    InsufficientInstances {
        relation: RelationId,
        needed: usize,
        available: usize,
    },

    #[error("no instances")]
    NoInstances,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown relation id {0}")]
    UnknownRelation(usize),

    #[error("support label {0} is not one of the episode targets")]
    LabelOutsideTargets(usize),

    #[error("sampler diverged in chain {chain} at step {step}")]
    SamplerDiverged { chain: usize, step: usize },

    #[error("non-finite loss (episode seed {seed}, stream {stream})")]
    NonFiniteLoss { seed: u64, stream: u64 },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("nothing to emit")]
    NothingToEmit,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
