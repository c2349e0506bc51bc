use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("atom {0} has zero norm")]
    ZeroAtom(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subdictionary is rank deficient (rank {rank} < {size} atoms)")]
    RankDeficient { rank: usize, size: usize },

    #[error("no atoms outside the support")]
    EmptyComplement,

    #[error("enumeration refused: N = {n} exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("infeasible instance spec: {0}")]
    InfeasibleSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
