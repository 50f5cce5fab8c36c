use thiserror::Error;

/// Errors raised by the numerical kernels, models and protocols.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")]
    Bracketing { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("index {index} out of range 0..={max}")]
    Bounds { index: usize, max: usize },

    #[error("requested {requested} modes but only {usable} are numerically usable")]
    Rank { requested: usize, usable: usize },

    #[error("ridge regression ill-conditioned (condition number {condition:.3e}, ridge {ridge:.3e})")]
    Regression { condition: f64, ridge: f64 },

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}
