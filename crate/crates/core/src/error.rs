use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("singular matrix (|det| = {det:e}, scale {scale:e})")]
    Singular { det: f64, scale: f64 },

    #[error("zero vector cannot span a projective point")]
    ZeroVector,

    #[error("pair is not in general position (|phi(v)| = {pairing:e})")]
    NotInGeneralPosition { pairing: f64 },

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("law file {path}: {msg}")]
    LawFile { path: String, msg: String },

    #[error("law is not centered (lambda_hat = {lambda_hat:e})")]
    NotCentered { lambda_hat: f64 },

    #[error("enumeration too large: {words} words exceed the cap of {cap}")]
    TooLarge { words: f64, cap: f64 },

    #[error("integration grid too short: integrand at the last node is {ratio:e} of its peak")]
    GridTooShort { ratio: f64 },

    #[error("reversed path is degenerate (general position failed)")]
    DegeneratePath,

    #[error("general-position drop rate {rate:e} exceeds 1e-6")]
    ExcessiveDrops { rate: f64 },

    #[error("spectral solver only supports d = 2, got d = {0}")]
    UnsupportedDim(usize),

    #[error("no spectral gap: power iteration failed to converge after {iterations} iterations")]
    NoGap { iterations: usize },

    #[error("too few survivors: {got} < {needed}")]
    TooFewSurvivors { got: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `line L, column C: message` for a serde_json failure.
pub(crate) fn json_error(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let msg = msg
        .rsplit_once(" at line ")
        .map_or(msg.as_str(), |(head, _)| head);
    format!("line {}, column {}: {msg}", e.line(), e.column())
}
