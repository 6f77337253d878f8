use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("argument {arg} = {value} outside domain {domain}")]
    Domain {
        arg: &'static str,
        value: f64,
        domain: String,
    },

    #[error("no critical point: {0}")]
    NoCriticalPoint(String),

    #[error("bracketing for the critical point reached the edge of the domain")]
    DomainTooNarrow,

    #[error("vlaw certification failed: {0}")]
    Certification(String),

    #[error("law is not supported on the integer lattice: {0}")]
    NotLattice(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid search exhausted below ceiling {ceiling}")]
    GridExhausted { ceiling: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
