use thiserror::Error;

/// Errors raised by the scattering, particle, medium and rendering code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Physically meaningful but outside the supported domain of a formula.
    #[error("physics domain error: {0}")]
    Domain(String),
    #[error("size parameter {alpha:.3} outside supported range (0, {max:.0}]")]
    SizeParameterRange { alpha: f64, max: f64 },
    #[error("scattering cross section is zero; phase function undefined")]
    UndefinedPhase,
    #[error("medium does not intersect the view frustum")]
    NoMediumInView,
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by physically invalid parameters rather than
    /// malformed input.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::SizeParameterRange { .. } | Error::UndefinedPhase | Error::NoMediumInView
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
