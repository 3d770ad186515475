use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: u32, size: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("anchor weights have zero norm, relative change is undefined")]
    ZeroNormAnchor,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("attack failed at iteration {iteration}: {reason}")]
    Attack { iteration: usize, reason: String },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found}, expected {expected}")]
    Version { expected: u16, found: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
