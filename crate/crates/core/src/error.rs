use thiserror::Error;

use crate::validate::ConstraintReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible instance: constraint {constraint} cannot be satisfied ({detail})")]
    Infeasible {
        constraint: &'static str,
        detail: String,
    },

    /// A candidate solution violates one or more constraints of the
    /// original mixed-integer problem.
    #[error("constraint violation: {}", .0.violations().join("; "))]
    Validation(ConstraintReport),

    #[error("subproblem failure at outer iteration {iteration}: {reason}")]
    Subproblem { iteration: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
