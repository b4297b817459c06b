use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// One or more input fields failed validation. Every failing field is listed.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("{what} did not converge after {iterations} iterations (last gap {last_gap:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        last_gap: f64,
    },

    #[error("degree overflow: {0}")]
    DegreeOverflow(String),

    #[error("series carries a nonzero tail bound ({0:e}); operation needs an exact series")]
    InexactInput(f64),

    #[error("index {index} out of range (degree cap {cap})")]
    IndexOutOfRange { index: usize, cap: usize },

    #[error("closed-form variance is singular at m = {0} (critical pair)")]
    CriticalCase(f64),

    #[error("map is not strictly monotone: {0}")]
    NonMonotone(String),

    #[error("monotonicity violated: {0}")]
    MonotonicityViolation(String),

    #[error("floating-point overflow: {0}")]
    Overflow(String),

    #[error("divergence suspected: {0}")]
    DivergenceSuspected(String),

    #[error("resource budget exceeded: {0}")]
    ResourceBudget(String),

    #[error("proxy horizon too close: {0}")]
    ProxyTooClose(String),

    #[error("underpowered condition: only {found} paths satisfy it, need {required}")]
    UnderpoweredCondition { found: usize, required: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::PreconditionViolation(msg.into())
    }

    pub(crate) fn non_convergence(what: impl Into<String>, iterations: usize, last_gap: f64) -> Self {
        Error::NonConvergence {
            what: what.into(),
            iterations,
            last_gap,
        }
    }

    /// True for failures of an iterative numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DivergenceSuspected(_)
                | Error::MonotonicityViolation(_)
        )
    }
}
