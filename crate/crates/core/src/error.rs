//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: (L={0}, N={1}) vs (L={2}, N={3})")]
    GridMismatch(f64, usize, f64, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside interval [{t0}, {t1}]")]
    OutOfInterval { t: f64, t0: f64, t1: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("spectral gap {gap:.4} below minimum {min} at t = {t}")]
    GapViolation { t: f64, gap: f64, min: f64 },

    #[error("branch overlap {overlap:.3} at t = {t}: eigenvalue crossing suspected")]
    BranchFlip { t: f64, overlap: f64 },

    #[error("no bound state with index {which} at t = {t}")]
    MissingBoundState { t: f64, which: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("mass drift {drift:e} at t = {t}")]
    MassDrift { t: f64, drift: f64 },

    #[error("step guard exceeded: {steps} steps requested, limit {limit}")]
    StepGuard { steps: usize, limit: usize },

    #[error("bound-state family left its branch at t = {t}: {detail}")]
    FamilyBreak { t: f64, detail: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
