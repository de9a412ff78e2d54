use thiserror::Error;

/// Errors raised by the winseq toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Record or value does not match the outcome schema.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    /// Input lies outside the domain of the operation (empty arm, p outside (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Zero variance with a non-zero estimate: no usable standard error.
    #[error("degenerate data: {0}")]
    Degenerate(String),
    /// Win ratio needs both win and loss proportions to be positive.
    #[error("undefined win ratio: u_w = {u_w}, u_l = {u_l}")]
    UndefinedRatio { u_w: f64, u_l: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Sample-size search hit its ceiling before reaching the target power.
    #[error("target power {target} not reached up to N = {n_max}; best power {best_power:.4} at N = {best_n}")]
    SearchFailed {
        target: f64,
        n_max: usize,
        best_n: usize,
        best_power: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
