use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "drive tones share a carrier frequency (delta = 0); merge them with \
         `merge_degenerate_drives` before assembling the generator"
    )]
    DegenerateDrive,

    #[error("steady state is degenerate (reciprocal condition estimate {rcond:.3e})")]
    DegenerateSteadyState { rcond: f64 },

    #[error("non-physical steady state: {0}")]
    Diagnostics(String),

    #[error("harmonics did not converge up to cutoff {cutoff} (last change {last_delta:.3e})")]
    NonConvergence { cutoff: usize, last_delta: f64 },

    #[error("resolvent solve failed at omega = {omega:.9e} rad/s")]
    ResolventFailure { omega: f64 },

    #[error("incoherent spectrum has a negative lobe {value:.3e} (max {max:.3e}) at omega = {omega:.9e} rad/s")]
    NegativeSpectrum { omega: f64, value: f64, max: f64 },

    #[error("integration step too large: {0}")]
    StepSize(String),

    #[error("integration accuracy lost: {0}")]
    Accuracy(String),

    #[error("trajectory is not periodic over the final beat period (deviation {deviation:.3e})")]
    NonPeriodic { deviation: f64 },

    #[error("correlation window too short: decayed only to {ratio:.3e} of its initial value")]
    Window { ratio: f64 },

    #[error("frequency grid is not uniform")]
    NonUniformGrid,

    #[error("singular matrix")]
    Singular,
}

pub type Result<T> = std::result::Result<T, Error>;
