use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("sequence term x_{index} = {value} is not positive")]
    NonPositiveTerm { index: usize, value: f64 },
    #[error("parameter {value} outside the domain: {reason}")]
    OutOfDomain { value: f64, reason: String },
    #[error("series tail {tail:e} exceeds tolerance {tol:e} x partial sum after {terms} terms")]
    TailNotConverged { terms: usize, tail: f64, tol: f64 },
    #[error("negative parameter {0}")]
    NegativeParameter(f64),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("singular reparametrization at p = {0}")]
    Singular(f64),
    #[error("integral did not converge: {0}")]
    DivergentIntegral(String),
    #[error("posterior evidence vanishes for observation {0}")]
    ZeroEvidence(usize),
    #[error("duality certificate failed: {0}")]
    CertificateFailed(String),
    #[error("continuous normalizer diverges at lambda = {0}")]
    DivergentNormalizer(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("materialization of {requested} entries exceeds the cap")]
    SizeLimit { requested: usize },
    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
