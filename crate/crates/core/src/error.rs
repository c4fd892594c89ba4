use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("step size underflow at t = {t}: tolerance cannot be met")]
    StepSizeUnderflow { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("integrator exceeded {max_steps} steps before t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("passage {n} at t = {t} breaks sign alternation")]
    EventOrderingViolation { n: usize, t: f64 },

    #[error("energy moved by {variation:e} on plateau {n} (allowed {allowed:e})")]
    PlateauViolation { n: usize, variation: f64, allowed: f64 },

    #[error("time {t} outside the covered range [{t_min}, {t_max}]")]
    OutOfRange { t: f64, t_min: f64, t_max: f64 },

    #[error("trajectory was integrated without dense output")]
    DenseOutputUnavailable,

    #[error("quadrature did not converge (estimate {estimate}, error {error:e})")]
    QuadratureFailure { estimate: f64, error: f64 },

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("|det F - 1| = {defect:e} at t = {t}")]
    SymplecticityLoss { t: f64, defect: f64 },

    #[error("sqrt(hbar)|F|_T <= kappa still holds at the end of the path (T = {t_end})")]
    HorizonExceedsPath { t_end: f64 },

    #[error("Gaussian width block is singular at t = {t}")]
    SingularWidth { t: f64 },

    #[error("grid needs {needed} points, cap is {cap}")]
    GridTooLarge { needed: usize, cap: usize },

    #[error("wave packet centre {q} is outside the safe region [{lo}, {hi}]")]
    CenterOutOfDomain { q: f64, lo: f64, hi: f64 },

    #[error("non-finite amplitudes at t = {t}")]
    NonFiniteAmplitudes { t: f64 },

    #[error("spectral tail carries {tail:e} of the norm")]
    AliasingDetected { tail: f64 },

    #[error("sqrt(hbar)|F|_t = {value} exceeds kappa = {kappa} at t = {t}")]
    HorizonViolated { t: f64, value: f64, kappa: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
