use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown vehicle model `{0}`")]
    UnknownModel(String),

    #[error("bracket-generated distribution does not reach full rank by depth {0}")]
    NotControllableAtDepth(usize),

    #[error("setpoint is not a regular point: growth vector {at_setpoint:?} changes to {nearby:?} nearby")]
    IrregularPoint {
        at_setpoint: Vec<usize>,
        nearby: Vec<usize>,
    },

    #[error("non-holonomic derivative of magnitude {magnitude:e} lies in the ambiguous band [1e-8, 1e-6)")]
    AmbiguousOrder { magnitude: f64 },

    #[error("non-holonomic order of coordinate {0} exceeds the largest weight")]
    OrderNotDetermined(usize),

    #[error("adapted frame is singular")]
    SingularFrame,

    #[error("dilation limit diverges for field {field}, component {component} (residual {residual:e})")]
    DivergentLimit {
        field: usize,
        component: usize,
        residual: f64,
    },

    #[error("exponent {degree}/{weight} is not an integer")]
    NonIntegerExponent { degree: u64, weight: u64 },

    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("rollout diverged at step {0}")]
    RolloutDivergence(usize),

    #[error("no insufficiency state found after {0} restarts")]
    NoSolutionFound(usize),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
