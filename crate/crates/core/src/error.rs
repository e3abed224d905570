use crate::poly::Domain;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ring degree {0} must be a power of two >= 4")]
    InvalidDegree(usize),

    #[error("only {found} of {needed} NTT-friendly primes available: {reason}")]
    PrimeExhaustion { needed: usize, found: usize, reason: String },

    #[error("invalid basis parameters: {0}")]
    InvalidBasis(String),

    #[error("polynomials are defined over different prime sets")]
    BasisMismatch,

    #[error("expected {expected:?} domain, found {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },

    #[error("Montgomery-form flags are incompatible: {0}")]
    FormMismatch(&'static str),

    #[error("invalid NTT plan: {0}")]
    InvalidPlan(String),

    #[error("invalid BConv tiling: {0}")]
    InvalidTiling(String),

    #[error("pipeline stage {0} is not element-aligned and cannot be fused")]
    NotElementAligned(usize),

    #[error("level {level} is out of range (max {max})")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("level mismatch: {0} vs {1}")]
    LevelMismatch(usize, usize),

    #[error("cannot rescale a ciphertext at level {0}")]
    LevelExhausted(usize),

    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),

    #[error("evaluation key kind mismatch: expected {expected}, found {found}")]
    KeyKindMismatch { expected: String, found: String },

    #[error("no evaluation key for rotation {0}")]
    MissingRotationKey(i64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
