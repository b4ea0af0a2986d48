use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A non-finite value appeared while stepping an ODE.
    #[error("integration diverged at t = {t}")]
    IntegrationDiverged { t: f64 },

    #[error("matrix is near-singular (condition estimate {cond:e})")]
    NearSingular { cond: f64 },

    /// `Φ₁ − Φ₂` could not be inverted at a reset jump: the regressor was not
    /// exciting enough over the elapsed window for the chosen gains.
    #[error("excitation failure{}: Φ₁ − Φ₂ condition estimate {cond:e}", at_time(.t))]
    ExcitationFailure { t: Option<f64>, cond: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("t = {t} outside tabulated range [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad data: {0}")]
    Data(String),

    #[error("bound undefined: {0}")]
    UndefinedBound(String),
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn at_time(t: &Option<f64>) -> String {
    t.map(|t| format!(" at jump t = {t}")).unwrap_or_default()
}
