//! Filtration values with truncation-safe lower-bound semantics.
//!
//! `Finite(n)` asserts the filtration value is exactly `n`; `AtLeast(h)`
//! asserts only that it is `≥ h` (the value may be ∞, i.e. the element may
//! be zero). Every comparison that cannot be decided from the representation
//! is reported as unknown rather than silently resolved.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FiltValue {
    Finite(i64),
    AtLeast(i64),
}

impl FiltValue {
    /// The certified lower bound carried by this value.
    pub fn lower_bound(self) -> i64 {
        match self {
            FiltValue::Finite(n) => n,
            FiltValue::AtLeast(h) => h,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, FiltValue::Finite(_))
    }

    /// Conservative minimum: exact when it can be certified, otherwise a
    /// lower bound.
    pub fn min(self, other: FiltValue) -> FiltValue {
        use FiltValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Finite(a.min(b)),
            (Finite(a), AtLeast(h)) | (AtLeast(h), Finite(a)) => {
                if a <= h {
                    // The unknown value is ≥ h ≥ a, so the minimum is a.
                    Finite(a)
                } else {
                    AtLeast(h)
                }
            }
            (AtLeast(a), AtLeast(b)) => AtLeast(a.min(b)),
        }
    }

    /// Lower-bound addition, used for products: filt(xy) ≥ filt(x)+filt(y).
    pub fn add(self, other: FiltValue) -> FiltValue {
        use FiltValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Finite(a + b),
            _ => AtLeast(self.lower_bound() + other.lower_bound()),
        }
    }

    /// Partial comparison. `None` means the representations do not decide
    /// the order (e.g. two `AtLeast` values, or `Finite(a)` vs `AtLeast(h)`
    /// with `a ≥ h`).
    pub fn compare(self, other: FiltValue) -> Option<Ordering> {
        use FiltValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Some(a.cmp(&b)),
            (Finite(a), AtLeast(h)) => {
                if a < h {
                    Some(Ordering::Less)
                } else {
                    None
                }
            }
            (AtLeast(h), Finite(a)) => {
                if a < h {
                    Some(Ordering::Greater)
                } else {
                    None
                }
            }
            (AtLeast(_), AtLeast(_)) => None,
        }
    }

    /// True when the value is certainly ≥ `bound`.
    pub fn ge(self, bound: i64) -> bool {
        self.lower_bound() >= bound
    }
}

impl fmt::Display for FiltValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FiltValue::Finite(n) => write!(f, "{n}"),
            FiltValue::AtLeast(h) => write!(f, ">={h}"),
        }
    }
}
