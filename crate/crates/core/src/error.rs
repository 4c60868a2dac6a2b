use thiserror::Error;

/// Errors raised by the forward solvers, the surrogate and the samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular system: zero pivot in column {column}")]
    SingularSystem { column: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolverBreakdown { residual: f64, tolerance: f64 },

    #[error("parameter {0:?} lies outside the parameter box")]
    OutsideDomain(Vec<f64>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("atom at {0:?} duplicates an existing atom")]
    DuplicateAtom(Vec<f64>),

    #[error("surrogate has no atoms")]
    EmptySurrogate,

    #[error("reduced system in cell {atom} is singular")]
    SingularReducedSystem { atom: usize },

    #[error("atom budget of {0} exceeded")]
    AtomBudgetExceeded(usize),

    #[error("refinement stalled: largest indicator {indicator:e} sits on an existing atom")]
    RefinementStalled { indicator: f64 },

    #[error("SMC did not reach the target weight within {0} iterations")]
    MaxIterations(usize),

    #[error("grid with {0} nodes exceeds the cap of 1e6")]
    GridTooLarge(usize),

    #[error("tensor grid oracle supports at most 3 parameters, got {0}")]
    GridDimension(usize),

    #[error("noise deviation needs at least two observations, got {0}")]
    TooFewObservations(usize),

    #[error("malformed data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
