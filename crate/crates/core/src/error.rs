use thiserror::Error;

/// Errors raised by the spectral approximation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("{what} needs {requested} elements, budget is {budget}")]
    Capacity {
        what: &'static str,
        requested: usize,
        budget: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sofic approximation error: {0}")]
    Sofic(String),

    #[error("measure model error: {0}")]
    Measure(String),

    #[error("incompatible approximation for periodic model: {0}")]
    Incompatible(String),

    #[error("enumeration budget exceeded ({requested} > {budget}); {hint}")]
    Budget {
        requested: u128,
        budget: u128,
        hint: &'static str,
    },

    #[error("self-adjointness violated at generator {generator} for {count} window(s), first {window:?}")]
    SelfAdjointness {
        generator: String,
        window: Vec<u8>,
        count: usize,
    },

    #[error("assembled matrix is not Hermitian at ({row}, {col})")]
    NonHermitian { row: usize, col: usize },

    #[error("value sets do not match schedule: {0}")]
    ValueSetMismatch(String),

    #[error("eigensolver did not converge (matrix hash {hash:016x})")]
    NoConvergence { hash: u64 },

    #[error("schedule certification failed at step {step}, row {row}")]
    ScheduleCertification { step: usize, row: usize },

    #[error("counting function increased from m={m} to m={next} at beta={beta}")]
    MonotonicityViolation { m: usize, next: usize, beta: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
