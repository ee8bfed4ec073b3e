use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory diverged at step {step}: non-finite state {state:?}")]
    Divergence { step: usize, state: Vec<f64> },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid initial distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rejection sampler gave up after {0} consecutive rejections")]
    RejectionExhausted(u64),

    #[error("time {t} is not an integer multiple of the step {dt}")]
    OffLattice { t: f64, dt: f64 },

    #[error("time {t} is outside the populated slices [{min}, {max}]")]
    TimeOutOfRange { t: f64, min: f64, max: f64 },

    #[error("point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),

    #[error("invalid sample plan: {0}")]
    InvalidPlan(String),

    #[error("no in-domain trajectory endpoint after {0} attempts")]
    EndpointRetries(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),

    #[error("invalid trainer configuration: {0}")]
    InvalidConfig(String),

    #[error("reference solver became unstable at step {step}")]
    Unstable { step: usize },

    #[error("singular linear system at pivot {0}")]
    Singular(usize),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
