use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("unknown blend shape `{0}`")]
    UnknownBlendShape(String),

    #[error("vertex-count mismatch: {what} has {found} entries, mesh has {expected} vertices")]
    VertexCountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("side mismatch: {0}")]
    SideMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("cannot align streams: {0}")]
    NoSignal(String),

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wraps an I/O failure together with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    /// Short stable category name, used in machine-readable error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::UnknownBlendShape(_) => "unknown_blend_shape",
            Error::VertexCountMismatch { .. } => "vertex_count_mismatch",
            Error::DegenerateMesh(_) => "degenerate_mesh",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::SideMismatch(_) => "side_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Empty(_) => "empty",
            Error::NoSignal(_) => "no_signal",
            Error::WeightFormat(_) => "weight_format",
            Error::UnexpectedEof => "unexpected_eof",
            Error::Diverged(_) => "diverged",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}
