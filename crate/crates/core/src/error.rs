use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("expected at least {min} p-values, got {got}")]
    Length { min: usize, got: usize },

    #[error("invalid p-value {value} at position {index}")]
    Value { index: usize, value: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("root bracketing failed: {0}")]
    Convergence(String),

    #[error("function is not monotone increasing: {0}")]
    NonMonotone(String),

    #[error("family has no arity-{0} definition")]
    Arity(usize),

    #[error("no rejection reachable: {0}")]
    NoRejection(String),

    #[error("lower set is empty")]
    EmptySet,

    #[error("invalid diagonal curve: {0}")]
    Curve(String),

    #[error("unknown method: {0}")]
    Method(String),
}

pub type Result<T> = std::result::Result<T, MergeError>;
