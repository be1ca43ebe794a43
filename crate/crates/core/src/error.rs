use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed triple line{}: expected 3 tab-separated fields, found {fields}", location(.path, .line))]
    MalformedLine {
        path: Option<PathBuf>,
        line: Option<usize>,
        fields: usize,
    },

    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: parameters have {params} entries, gradients {grads}")]
    ShapeMismatch { params: usize, grads: usize },

    #[error("scale fit needs at least 2 points, got {0}")]
    InsufficientPoints(usize),

    #[error("degenerate fit input: {0}")]
    DegenerateInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("replay set is empty")]
    EmptyReplaySet,

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("unknown entity {0}")]
    UnknownEntity(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("snapshot {index}: {source}")]
    Snapshot {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

fn location(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" at {}:{}", p.display(), l),
        (Some(p), None) => format!(" in {}", p.display()),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the snapshot index a failure happened at.
    pub fn at_snapshot(self, index: usize) -> Self {
        match self {
            e @ Error::Snapshot { .. } => e,
            e => Error::Snapshot {
                index,
                source: Box::new(e),
            },
        }
    }
}
