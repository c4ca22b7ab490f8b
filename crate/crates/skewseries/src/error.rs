//! Shared error type; each variant maps to a distinct CLI exit code in the
//! harness.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ring mismatch: {0}")]
    RingMismatch(String),
    #[error("not a unit: {0}")]
    NotAUnit(String),
    #[error("precision insufficient: {0}")]
    PrecisionInsufficient(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("derivation mismatch: {0}")]
    DerivMismatch(String),
    #[error("missing certificate: {0}")]
    MissingCertificate(String),
    #[error("guarantee unreachable: requested {requested}, best achievable {best}")]
    GuaranteeUnreachable { requested: i64, best: i64 },
    #[error("hypothesis failure: {0}")]
    HypothesisFailure(String),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("matrix not strictly lower triangular")]
    NotStrictlyLower,
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
