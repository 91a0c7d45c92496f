use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("class {class} has {available} samples but {required} are needed for equal partitions")]
    Sizing {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("non-finite update from device {device} in round {round}")]
    NonFinite { round: usize, device: usize },

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
