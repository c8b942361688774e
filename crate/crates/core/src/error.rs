use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the library.
///
/// The variants split into two classes (see [`Error::is_numerical`]): bad
/// input or violated model hypotheses, and numerical failures where the input
/// was fine but a computation could not meet its tolerance.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("hypothesis violated: {0}")]
    Validation(String),

    #[error("inadmissible CAR(2) parameters: {0}")]
    InadmissibleParams(String),

    #[error("kernel evaluated at negative time t = {0}")]
    NegativeTime(f64),

    #[error("kernel exceeds its decay envelope at t = {t}: |x(t)| = {value} > {bound}")]
    EnvelopeViolation { t: f64, value: f64, bound: f64 },

    #[error("degenerate kernel: eta^2 = {0} is not strictly positive")]
    DegenerateKernel(f64),

    #[error("function is not centered under N(0,1): a_0 = {0}")]
    NotCentered(f64),

    #[error("value out of supported range: {0}")]
    OutOfRange(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("circulant embedding has a negative eigenvalue {value} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("tolerance not met: error {achieved:e} exceeds requested {requested:e}")]
    ToleranceNotMet { achieved: f64, requested: f64 },

    #[error("Hermite quadrature unstable: {0}")]
    QuadratureUnstable(String),

    #[error("moment equations have no admissible solution: {0}")]
    NoSolution(String),

    #[error("singular Jacobian in delta method")]
    SingularJacobian,
}

impl Error {
    /// True for failures of a numerical procedure on valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NegativeEigenvalue { .. }
                | Error::ToleranceNotMet { .. }
                | Error::QuadratureUnstable(_)
                | Error::NoSolution(_)
                | Error::SingularJacobian
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Validation(_) => "validation",
            Error::InadmissibleParams(_) => "inadmissible_params",
            Error::NegativeTime(_) => "negative_time",
            Error::EnvelopeViolation { .. } => "envelope_violation",
            Error::DegenerateKernel(_) => "degenerate_kernel",
            Error::NotCentered(_) => "not_centered",
            Error::OutOfRange(_) => "out_of_range",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::NegativeEigenvalue { .. } => "negative_eigenvalue",
            Error::ToleranceNotMet { .. } => "tolerance_not_met",
            Error::QuadratureUnstable(_) => "quadrature_unstable",
            Error::NoSolution(_) => "no_solution",
            Error::SingularJacobian => "singular_jacobian",
        }
    }
}
