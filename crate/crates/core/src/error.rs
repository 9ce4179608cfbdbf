//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the estimation pipeline.
///
/// Variants are grouped loosely by origin: input validation, estimator
/// preconditions, sampler pathologies and I/O. The CLI maps validation-type
/// variants to exit code 1 and numeric-failure variants to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty or degenerate sample: {0}")]
    EmptyOrDegenerate(String),
    #[error("non-positive income: {0}")]
    NonPositiveIncome(String),
    #[error("entropy order alpha must differ from 0 and 1 (got {0})")]
    AlphaDegenerate(f64),
    #[error("unsupported index for this operation: {0}")]
    UnsupportedIndex(String),
    #[error("domain `{0}` absent or empty")]
    EmptyDomain(String),
    #[error("degenerate weighted mean in domain `{0}`")]
    DegenerateMean(String),
    #[error("too few effective units: n_tilde = {0}, need > 2")]
    TooFewEffectiveUnits(usize),
    #[error("fewer than 2 variance units in stratum `{0}`")]
    InsufficientPsus(String),
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
    #[error("singular smoothing fit: {0}")]
    SingularFit(String),
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("non-positive dispersion: {0}")]
    NonPositivePhi(String),
    #[error("root bracketing failed: {0}")]
    NoRoot(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("need at least 2 (split) chains")]
    TooFewChains,
    #[error("too few draws: {0}")]
    TooFewDraws(String),
    #[error("sampler rejected essentially all proposals (acceptance {0:.2e})")]
    AllRejected(f64),
    #[error("log-posterior not finite at any attempted initial point")]
    NonFiniteInit,
    #[error("degenerate importance weights for domain {0}")]
    DegenerateWeights(usize),
    #[error("direct-estimate variance is zero in domain `{0}`")]
    DegenerateDirect(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid value at line {line}: {msg}")]
    InvalidValue { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of numeric procedures (as opposed to bad inputs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularFit(_)
                | Error::NonPositivePhi(_)
                | Error::NoRoot(_)
                | Error::NonFinite(_)
                | Error::AllRejected(_)
                | Error::NonFiniteInit
                | Error::DegenerateWeights(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
