use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported case: {0}")]
    Unsupported(String),
    #[error("no proper policy: target unreachable from every non-target state")]
    NoProperPolicy,
    #[error("improper policy at states {0:?}")]
    ImproperPolicy(Vec<usize>),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
