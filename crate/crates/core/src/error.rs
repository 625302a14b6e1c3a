use thiserror::Error;

/// Errors raised by schedule construction, model evaluation and sampling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown condition label `{0}`")]
    UnknownCondition(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("zero-length vector has no interpolation direction")]
    ZeroVector,

    #[error("vectors are antipodal; the interpolation plane is undefined")]
    Antipodal,

    #[error("optimization step {step} would overshoot the mean at distance {dist}")]
    StepOvershoot { step: f64, dist: f64 },

    #[error("reverse-step variance choice violates 1 - alpha_bar_prev - sigma^2 >= 0")]
    InvalidVarianceChoice,

    #[error("aggregation members do not share one schedule")]
    ScheduleMismatch,

    #[error("empty sample set")]
    EmptySamples,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
