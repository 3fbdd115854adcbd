use thiserror::Error;

/// Errors raised by model loading, filtering and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("observation {observation} has zero probability under the given belief")]
    ZeroProbabilityObservation { observation: usize },

    #[error("window has zero probability under the given prior")]
    ZeroProbabilityWindow,

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("chain has {classes} recurrent classes; invariant measure is not unique")]
    NonUniqueInvariant { classes: usize },

    #[error("policy has no action for reachable window code {code}")]
    PolicyGap { code: usize },

    #[error("{0}")]
    Guard(String),

    #[error("unknown example {0:?} (expected repair1, repair2, repair3 or repair3-perfect)")]
    UnknownExample(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl Error {
    /// Tags an error with the experiment stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error below any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
