use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value violates a type invariant (negative rate, empty box, ...).
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// An operation was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The integrator step does not resolve the fastest rotating-frame scale.
    #[error("time step {dt:e} s exceeds the stability limit {limit:e} s")]
    StepTooLarge { dt: f64, limit: f64 },

    /// Spectrum has no resolvable feature to seed a fit from.
    #[error("spectrum is featureless (peak-to-peak {0:e})")]
    FlatSpectrum(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("fit problem is malformed: {0}")]
    FitSetup(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
