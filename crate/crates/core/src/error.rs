use thiserror::Error;

/// Errors raised by the hysteresis, dynamics and certificate layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid thresholds: alpha1 = {alpha1}, alpha2 = {alpha2} (need 0 <= alpha1 < alpha2 <= 1)")]
    InvalidThresholds { alpha1: f64, alpha2: f64 },

    #[error("requested relay state {requested} contradicts input {input} for thresholds ({alpha1}, {alpha2})")]
    IncompatibleInitialState {
        alpha1: f64,
        alpha2: f64,
        input: f64,
        requested: bool,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("branch direction mismatch: {0}")]
    DirectionMismatch(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid memory curve: {0}")]
    InvalidMemory(String),

    #[error("parameters violate the model hypotheses: {0}")]
    InvalidHypotheses(String),

    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("repeated grazing contact with the nullcline near t = {t}")]
    Grazing { t: f64 },

    #[error("root bracketing failed: {0}")]
    RootBracketFailure(String),

    #[error("kappa is not positive even for vanishing hysteresis width")]
    NoCertifiedInterval,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (CLI exit code 1).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidThresholds { .. }
                | Error::IncompatibleInitialState { .. }
                | Error::InvalidDensity(_)
                | Error::InvalidMemory(_)
                | Error::InvalidHypotheses(_)
                | Error::Config { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
