use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a closed-form kernel.
    #[error("domain error: {0}")]
    Domain(String),

    /// Grids, band limits or solver settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Phantom or line geometry that violates the support or grid bounds.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Non-finite iterates or a diverging iteration.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
