//! Finite truncations of the column-null matrix machinery: change of basis
//! between the x-power basis and the level-n basis (X_n-powers times x^ℓ or
//! (x−t)^ℓ), and the free-module decomposition of a bounded series over the
//! level-n subring.
//!
//! The change-of-basis matrix A has rows the x-coefficients of the monic
//! polynomials A_m = X_n^k·y^ℓ with m = k·p^n + ℓ; A = I − U with U strictly
//! lower-triangular, so B = A^{-1} = I + U + U² + … is a finite sum at
//! truncation and decomposition is exact blockwise.

use crate::coeffring::{Element, RingSpec};
use crate::error::{Error, Result};
use crate::series::{eval_x, poly_mul, BoundedSeries, CertifiedDeriv, SkewPoly};
use crate::skewmaps::{derive_level, DerivedLevel};
use serde::{Deserialize, Serialize};

// --- band matrices ----------------------------------------------------------

/// A (K+1)×(K+1) truncation of an N×N-indexed matrix, with the certification
/// flags that make infinite products meaningful for the untruncated object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandMatrix {
    pub k: usize,
    /// Row-major (K+1)×(K+1) entries.
    pub entries: Vec<Vec<Element>>,
    /// Declared bound: filt(a_{i,j}) ≥ lower_bound for all entries.
    pub lower_bound: i64,
    pub column_null_certified: bool,
    pub row_finite: bool,
    /// a_{i,j} = 0 for i ≤ j.
    pub strictly_lower: bool,
    pub ring: RingSpec,
}

impl PartialEq for BandMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.entries == other.entries
    }
}

impl BandMatrix {
    pub fn zero(ring: &RingSpec, k: usize) -> BandMatrix {
        let z = Element::zero(ring);
        BandMatrix {
            k,
            entries: vec![vec![z; k + 1]; k + 1],
            lower_bound: ring.cap(),
            column_null_certified: true,
            row_finite: true,
            strictly_lower: true,
            ring: ring.clone(),
        }
    }

    pub fn identity(ring: &RingSpec, k: usize) -> BandMatrix {
        let mut m = BandMatrix::zero(ring, k);
        for i in 0..=k {
            m.entries[i][i] = Element::one(ring);
        }
        m.lower_bound = 0;
        m.strictly_lower = false;
        m
    }

    pub fn entry(&self, i: usize, j: usize) -> &Element {
        &self.entries[i][j]
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|row| row.iter().all(|e| e.is_zero()))
    }

    /// Recompute the entrywise filtration floor (min of certified lower
    /// bounds; the ring cap for the zero matrix).
    pub fn observed_lower_bound(&self) -> i64 {
        self.entries
            .iter()
            .flatten()
            .map(|e| e.filt().lower_bound())
            .min()
            .unwrap_or_else(|| self.ring.cap())
    }

    /// Check the strictly-lower shape on the stored entries.
    pub fn is_strictly_lower(&self) -> bool {
        self.entries
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, e)| i > j || e.is_zero()))
    }

    pub fn add(&self, other: &BandMatrix) -> Result<BandMatrix> {
        if self.k != other.k {
            return Err(Error::Shape("matrix size mismatch in add".into()));
        }
        let mut out = self.clone();
        for i in 0..=self.k {
            for j in 0..=self.k {
                out.entries[i][j] = self.entries[i][j].add(&other.entries[i][j])?;
            }
        }
        out.lower_bound = self.lower_bound.min(other.lower_bound);
        out.column_null_certified = self.column_null_certified && other.column_null_certified;
        out.row_finite = self.row_finite && other.row_finite;
        out.strictly_lower = self.strictly_lower && other.strictly_lower;
        Ok(out)
    }

    pub fn sub(&self, other: &BandMatrix) -> Result<BandMatrix> {
        let mut neg = other.clone();
        for row in &mut neg.entries {
            for e in row.iter_mut() {
                *e = e.neg();
            }
        }
        self.add(&neg)
    }
}

/// Truncated matrix product. The infinite product is defined when the right
/// factor is column-null (or the left factor row-finite); the truncation
/// demands the same certificates.
pub fn mat_mul(a: &BandMatrix, b: &BandMatrix) -> Result<BandMatrix> {
    if a.k != b.k {
        return Err(Error::Shape("matrix size mismatch in mat_mul".into()));
    }
    if !(b.column_null_certified || a.row_finite) {
        return Err(Error::MissingCertificate(
            "mat_mul needs a column-null right factor or a row-finite left factor".into(),
        ));
    }
    let k = a.k;
    let mut out = BandMatrix::zero(&a.ring, k);
    for i in 0..=k {
        for l in 0..=k {
            if a.entries[i][l].is_zero() {
                continue;
            }
            for j in 0..=k {
                if b.entries[l][j].is_zero() {
                    continue;
                }
                let term = a.entries[i][l].mul(&b.entries[l][j])?;
                out.entries[i][j] = out.entries[i][j].add(&term)?;
            }
        }
    }
    out.lower_bound = a.lower_bound.saturating_add(b.lower_bound).min(a.ring.cap());
    out.column_null_certified = a.column_null_certified && b.column_null_certified;
    out.row_finite = a.row_finite && b.row_finite;
    out.strictly_lower = a.strictly_lower && b.strictly_lower;
    Ok(out)
}

/// Row vector times matrix: (vA)_j = Σ_i v_i·a_{i,j}.
pub fn vec_mat(v: &[Element], a: &BandMatrix) -> Result<Vec<Element>> {
    if v.len() != a.k + 1 {
        return Err(Error::Shape("vector length mismatch in vec_mat".into()));
    }
    let mut out = vec![Element::zero(&a.ring); a.k + 1];
    for (i, vi) in v.iter().enumerate() {
        if vi.is_zero() {
            continue;
        }
        for j in 0..=a.k {
            if a.entries[i][j].is_zero() {
                continue;
            }
            out[j] = out[j].add(&vi.mul(&a.entries[i][j])?)?;
        }
    }
    Ok(out)
}

/// Inverse of I − U for strictly lower U: B = I + U + U² + … . The sum is
/// finite at truncation (U^{K+1} vanishes on the first K+1 rows) and B is a
/// two-sided inverse of I − U exactly at truncation. With lower_bound(U) ≥ 1
/// the tail V = B − I inherits the bound and the inverse is certified
/// column-null.
pub fn neumann_inverse(u: &BandMatrix) -> Result<BandMatrix> {
    if !u.strictly_lower || !u.is_strictly_lower() {
        return Err(Error::NotStrictlyLower);
    }
    let k = u.k;
    let mut b = BandMatrix::identity(&u.ring, k);
    let mut pow = BandMatrix::identity(&u.ring, k);
    for _ in 0..k {
        pow = mat_mul(&pow, u)?;
        if pow.is_zero() {
            break;
        }
        b = b.add(&pow)?;
    }
    let v_bound = if u.lower_bound >= 0 {
        u.lower_bound
    } else {
        u.lower_bound.saturating_mul(k as i64)
    };
    b.lower_bound = v_bound.min(0);
    b.column_null_certified = u.lower_bound >= 1;
    b.row_finite = true;
    b.strictly_lower = false;
    Ok(b)
}

// --- change of basis --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Basis elements X_n^k·x^ℓ.
    XPowers,
    /// Basis elements X_n^k·(x−t)^ℓ (the monic basis the crossed product
    /// uses).
    XMinusTPowers,
}

/// The (K+1)×(K+1) change-of-basis matrix whose row m holds the
/// x-coefficients of the monic degree-m polynomial A_m = X_n^k·y^ℓ,
/// m = k·p^n + ℓ. Unit diagonal; zero above the diagonal.
pub fn build_a(level: &DerivedLevel, base: &CertifiedDeriv, basis: Basis, k: usize) -> Result<BandMatrix> {
    let d = &base.spec;
    let ring = d.ring()?;
    let pn = level
        .p
        .checked_pow(level.n)
        .ok_or_else(|| Error::OutOfRange("p^n overflows".into()))? as usize;
    let x_n = eval_x(level, d)?;
    let y = match basis {
        Basis::XPowers => SkewPoly::x(d)?,
        Basis::XMinusTPowers => SkewPoly::x_minus_t(d)?,
    };
    // y^ℓ for ℓ < p^n, then walk X_n^k incrementally.
    let mut y_pows = Vec::with_capacity(pn);
    y_pows.push(SkewPoly::one(d)?);
    for _ in 1..pn {
        let next = poly_mul(y_pows.last().unwrap(), &y)?;
        y_pows.push(next);
    }
    let mut a = BandMatrix::zero(&ring, k);
    let mut xn_pow = SkewPoly::one(d)?;
    for m in 0..=k {
        let (kp, l) = (m / pn, m % pn);
        if m > 0 && l == 0 {
            xn_pow = poly_mul(&xn_pow, &x_n)?;
        }
        let row_poly = poly_mul(&xn_pow, &y_pows[l])?;
        if row_poly.degree() != Some(m) {
            return Err(Error::HypothesisFailure(format!(
                "basis row {m} (X^{kp}·y^{l}) is not monic of degree {m}"
            )));
        }
        for j in 0..=m {
            a.entries[m][j] = row_poly.coeff(j)?;
        }
        if a.entries[m][m] != Element::one(&ring) {
            return Err(Error::HypothesisFailure(format!(
                "basis row {m} has a non-unit leading coefficient"
            )));
        }
    }
    a.strictly_lower = false;
    a.row_finite = true;
    a.lower_bound = a.observed_lower_bound().min(0);
    // A = I − U; A is certified column-null exactly when U is (I always is).
    let u = BandMatrix::identity(&ring, k).sub(&a)?;
    a.column_null_certified = u.observed_lower_bound() >= 1;
    Ok(a)
}

// --- decomposition ----------------------------------------------------------

/// A series written over the level-n subring: f = Σ_{ℓ<p^n} g_ℓ(X_n)·y_ℓ,
/// stored as the p^n coefficient vectors of the g_ℓ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    /// parts[ℓ][k] = coefficient of X_n^k in g_ℓ; each part has length Q+1.
    pub parts: Vec<Vec<Element>>,
    pub level: u32,
    pub basis: Basis,
    /// Minimum per-coefficient guarantee inherited from the input.
    pub guarantee: i64,
    pub tail_exact: bool,
    pub deriv: CertifiedDeriv,
}

impl PartialEq for Decomposition {
    fn eq(&self, other: &Self) -> bool {
        self.level == other.level && self.basis == other.basis && self.parts == other.parts
    }
}

/// Precomputed change-of-basis data for one (level, basis, Q) triple; build
/// once, decompose many.
#[derive(Debug, Clone)]
pub struct Rebaser {
    pub level: DerivedLevel,
    pub basis: Basis,
    /// Part order: each part stores X_n-coefficients 0..=q.
    pub q: usize,
    /// Matrix truncation K = p^n·(Q+1) − 1 (blockwise-aligned).
    pub k: usize,
    pub a: BandMatrix,
    pub b: BandMatrix,
    pub deriv: CertifiedDeriv,
}

impl Rebaser {
    pub fn new(deriv: &CertifiedDeriv, n: u32, basis: Basis, q: usize) -> Result<Rebaser> {
        let level = derive_level(&deriv.spec, n)?;
        let pn = level
            .p
            .checked_pow(n)
            .ok_or_else(|| Error::OutOfRange("p^n overflows".into()))? as usize;
        let k = pn * (q + 1) - 1;
        let ring = deriv.spec.ring()?;
        let a = build_a(&level, deriv, basis, k)?;
        let mut u = BandMatrix::identity(&ring, k).sub(&a)?;
        if !u.is_strictly_lower() {
            return Err(Error::HypothesisFailure(
                "change-of-basis matrix is not unitriangular".into(),
            ));
        }
        u.strictly_lower = true;
        u.lower_bound = u.observed_lower_bound();
        let b = neumann_inverse(&u)?;
        Ok(Rebaser {
            level,
            basis,
            q,
            k,
            a,
            b,
            deriv: deriv.clone(),
        })
    }

    fn pn(&self) -> usize {
        self.level.p.pow(self.level.n) as usize
    }

    /// v = φ(f)·B: the x-coefficient row of f times A^{-1}, de-interleaved
    /// into the p^n parts.
    pub fn decompose(&self, f: &BoundedSeries) -> Result<Decomposition> {
        if f.deriv != self.deriv {
            return Err(Error::DerivMismatch("decompose input".into()));
        }
        if f.k_order() > self.k {
            return Err(Error::OutOfRange(format!(
                "series order {} exceeds the matrix truncation {}",
                f.k_order(),
                self.k
            )));
        }
        let mut row = Vec::with_capacity(self.k + 1);
        let mut guarantee = self.deriv.spec.ring()?.cap();
        for m in 0..=self.k {
            row.push(f.coeff(m)?);
            guarantee = guarantee.min(f.guarantee(m));
        }
        let v = vec_mat(&row, &self.b)?;
        let pn = self.pn();
        let mut parts = vec![Vec::with_capacity(self.q + 1); pn];
        for (m, c) in v.into_iter().enumerate() {
            parts[m % pn].push(c);
        }
        Ok(Decomposition {
            parts,
            level: self.level.n,
            basis: self.basis,
            guarantee,
            tail_exact: f.tail_exact && f.k_order() <= self.k,
            deriv: self.deriv.clone(),
        })
    }

    pub fn recompose(&self, d: &Decomposition) -> Result<BoundedSeries> {
        if d.deriv != self.deriv || d.level != self.level.n || d.basis != self.basis {
            return Err(Error::DerivMismatch("recompose input".into()));
        }
        let pn = self.pn();
        if d.parts.len() != pn || d.parts.iter().any(|p| p.len() != self.q + 1) {
            return Err(Error::Shape("decomposition part shape mismatch".into()));
        }
        let mut v = Vec::with_capacity(self.k + 1);
        for m in 0..=self.k {
            v.push(d.parts[m % pn][m / pn].clone());
        }
        let coeffs = vec_mat(&v, &self.a)?;
        let lower = coeffs
            .iter()
            .map(|c| c.filt().lower_bound())
            .min()
            .unwrap_or(0);
        Ok(BoundedSeries {
            coeffs,
            lower,
            guarantees: vec![d.guarantee; self.k + 1],
            tail_exact: d.tail_exact,
            deriv: self.deriv.clone(),
        })
    }
}

/// One-shot decomposition; the part order is read off the input order
/// (Q = ⌊K/p^n⌋ with K rounded up to the next aligned truncation).
pub fn decompose(
    f: &BoundedSeries,
    n: u32,
    basis: Basis,
) -> Result<Decomposition> {
    let level = derive_level(&f.deriv.spec, n)?;
    let pn = level
        .p
        .checked_pow(n)
        .ok_or_else(|| Error::OutOfRange("p^n overflows".into()))? as usize;
    let q = f.k_order() / pn;
    Rebaser::new(&f.deriv, n, basis, q)?.decompose(f)
}

pub fn recompose(d: &Decomposition) -> Result<BoundedSeries> {
    let q = d.parts.first().map(|p| p.len()).unwrap_or(1) - 1;
    Rebaser::new(&d.deriv, d.level, d.basis, q)?.recompose(d)
}
