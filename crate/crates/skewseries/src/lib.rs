//! Certified-truncation arithmetic for skew polynomial rings and bounded
//! skew power series rings over complete filtered coefficient rings.
//!
//! The library verifies, at finite precision ("desk scale"), the
//! constructive identities underlying bounded skew power series rings for
//! inner σ-derivations: compatibility certificates for (σ, δ), the bounded
//! series product with rigorous precision bounds, the level-n subring tower
//! (X_n, Σ_n, Δ_n), change of basis via triangular matrix inversion,
//! crossed-product relations at the normal element x − t, and the
//! ideal-reduction procedures behind the simplicity statements.
//!
//! Everything is lower-bound honest: filtration claims are certified lower
//! bounds, certificates are explicitly "verified at horizon", and series
//! coefficients carry per-coefficient guarantees.

pub mod coeffring;
pub mod crossed;
pub mod error;
pub mod harness;
pub mod filt;
pub mod rebase;
pub mod rng;
pub mod series;
pub mod skewmaps;

pub use coeffring::{Element, RingSpec};
pub use error::{Error, Result};
pub use filt::FiltValue;
