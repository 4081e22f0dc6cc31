use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("layer {layer} collapses to zero: {stage} produces {rows}x{cols}")]
    DegenerateShape {
        layer: usize,
        stage: &'static str,
        rows: isize,
        cols: isize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("xml error near byte {offset}: {msg}")]
    Xml { offset: u64, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, thread {thread}")]
    Divergence { epoch: usize, thread: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} not supported (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
