//! Skew polynomial arithmetic and bounded skew power series arithmetic with
//! certified truncation error.
//!
//! Multiplication extends the defining relation x·r = σ(r)·x + δ(r); for
//! commuting (σ, δ) the push-through rule is
//!     x^i·s = Σ_{e=0}^{i} C(i,e)·σ^e δ^{i−e}(s)·x^e,
//! and the series product coefficient is
//!     c_k = Σ_{e≤k, i≥e} C(i,e)·a_i·σ^e δ^{i−e}(b_{k−e}),
//! truncated at an i-cutoff K_in chosen from the requested guarantee using
//! the quasi-compatibility certificate (B, N) and the tail-decay bound
//! deg(σ^q δ^p) ≥ ⌊p/N⌋ + B.

use crate::coeffring::{binom_u128, int_image, random_element, spanning_set, Element};
use crate::error::{Error, Result};
use crate::filt::FiltValue;
use crate::rng::SplitMix64;
use crate::skewmaps::{
    certify, CertMode, CertWindow, CheckReport, CompatCertificate, DerivForm, DerivSpec,
    DerivedLevel,
};
use serde::{Deserialize, Serialize};

// --- skew polynomials -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewPoly {
    /// c_0 .. c_d with trailing zeros trimmed.
    pub coeffs: Vec<Element>,
    pub deriv: DerivSpec,
}

impl PartialEq for SkewPoly {
    fn eq(&self, other: &Self) -> bool {
        self.coeffs == other.coeffs
    }
}

impl SkewPoly {
    pub fn new(mut coeffs: Vec<Element>, deriv: DerivSpec) -> SkewPoly {
        while coeffs.last().map_or(false, |c| c.is_zero()) {
            coeffs.pop();
        }
        SkewPoly { coeffs, deriv }
    }

    pub fn zero(deriv: &DerivSpec) -> SkewPoly {
        SkewPoly {
            coeffs: vec![],
            deriv: deriv.clone(),
        }
    }

    pub fn constant(c: Element, deriv: &DerivSpec) -> SkewPoly {
        SkewPoly::new(vec![c], deriv.clone())
    }

    pub fn one(deriv: &DerivSpec) -> Result<SkewPoly> {
        let ring = deriv.ring()?;
        Ok(SkewPoly::constant(Element::one(&ring), deriv))
    }

    /// The variable x.
    pub fn x(deriv: &DerivSpec) -> Result<SkewPoly> {
        let ring = deriv.ring()?;
        Ok(SkewPoly::new(
            vec![Element::zero(&ring), Element::one(&ring)],
            deriv.clone(),
        ))
    }

    /// x − t for the inner form.
    pub fn x_minus_t(deriv: &DerivSpec) -> Result<SkewPoly> {
        let t = match &deriv.form {
            DerivForm::Inner { t } => t.clone(),
            _ => return Err(Error::Shape("x − t needs the Inner form".into())),
        };
        Ok(SkewPoly::new(
            vec![t.neg(), Element::one(&t.ring)],
            deriv.clone(),
        ))
    }

    pub fn degree(&self) -> Option<usize> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn coeff(&self, k: usize) -> Result<Element> {
        match self.coeffs.get(k) {
            Some(c) => Ok(c.clone()),
            None => Ok(Element::zero(&self.deriv.ring()?)),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, other: &SkewPoly) -> Result<SkewPoly> {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            out.push(self.coeff(k)?.add(&other.coeff(k)?)?);
        }
        Ok(SkewPoly::new(out, self.deriv.clone()))
    }

    pub fn sub(&self, other: &SkewPoly) -> Result<SkewPoly> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> SkewPoly {
        SkewPoly {
            coeffs: self.coeffs.iter().map(|c| c.neg()).collect(),
            deriv: self.deriv.clone(),
        }
    }

    /// Left module action of the coefficient ring: a·f.
    pub fn scale_left(&self, a: &Element) -> Result<SkewPoly> {
        let mut out = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            out.push(a.mul(c)?);
        }
        Ok(SkewPoly::new(out, self.deriv.clone()))
    }
}

/// Exact skew polynomial product via the push-through rule; requires the
/// commuting hypothesis σδ = δσ (a precondition certified elsewhere, not
/// re-checked per call).
pub fn poly_mul(f: &SkewPoly, g: &SkewPoly) -> Result<SkewPoly> {
    if f.deriv != g.deriv {
        return Err(Error::DerivMismatch("poly_mul factors".into()));
    }
    let d = &f.deriv;
    let ring = d.ring()?;
    if f.coeffs.is_empty() || g.coeffs.is_empty() {
        return Ok(SkewPoly::zero(d));
    }
    let df = f.coeffs.len() - 1;
    let dg = g.coeffs.len() - 1;
    let mut out = vec![Element::zero(&ring); df + dg + 1];
    for (j, b_j) in g.coeffs.iter().enumerate() {
        if b_j.is_zero() {
            continue;
        }
        // δ-powers of b_j up to the largest x-power of f.
        let mut delta_pows = Vec::with_capacity(df + 1);
        delta_pows.push(b_j.clone());
        for _ in 0..df {
            let next = d.apply(delta_pows.last().unwrap())?;
            delta_pows.push(next);
        }
        for (i, a_i) in f.coeffs.iter().enumerate() {
            if a_i.is_zero() {
                continue;
            }
            for e in 0..=i {
                let mut img = delta_pows[i - e].clone();
                for _ in 0..e {
                    img = d.sigma.apply(&img, false)?;
                }
                let c = int_image(&ring, binom_u128(i as u64, e as u64), false);
                let contrib = a_i.mul(&c)?.mul(&img)?;
                out[e + j] = out[e + j].add(&contrib)?;
            }
        }
    }
    Ok(SkewPoly::new(out, d.clone()))
}

pub fn poly_pow(f: &SkewPoly, n: u32) -> Result<SkewPoly> {
    let mut acc = SkewPoly::one(&f.deriv)?;
    for _ in 0..n {
        acc = poly_mul(&acc, f)?;
    }
    Ok(acc)
}

// --- the level polynomial X_n -----------------------------------------------

/// X_n = (x − t)^{p^n} + T_n as an explicit monic polynomial of degree p^n
/// over the base derivation. Requires σ(t) = t (certified at horizon).
pub fn eval_x(level: &DerivedLevel, base: &DerivSpec) -> Result<SkewPoly> {
    if !base.sigma_fixes_t()? {
        return Err(Error::HypothesisFailure("σ(t) ≠ t at horizon".into()));
    }
    let pn = level
        .p
        .checked_pow(level.n)
        .ok_or_else(|| Error::OutOfRange("p^n overflows".into()))?;
    let g = SkewPoly::x_minus_t(base)?;
    let gp = poly_pow(&g, pn as u32)?;
    let t_n = SkewPoly::constant(level.t_n.clone(), base);
    gp.add(&t_n)
}

// --- relation checks --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// x·r = σ(r)·x + δ(r)
    Defining,
    /// (x − t)·s = σ(s)·(x − t)
    Normality,
    /// X_n·s = Σ_n(s)·X_n + Δ_n(s)
    Subring,
}

/// Evaluate the left-minus-right side of the chosen relation on the
/// spanning set; pass iff ≡ 0 at precision.
pub fn relation_check(
    kind: RelationKind,
    d: &DerivSpec,
    level: Option<&DerivedLevel>,
    span_lo: i64,
    span_hi: i64,
) -> Result<CheckReport> {
    let ring = d.ring()?;
    let span = spanning_set(&ring, span_lo, span_hi);
    let x_n = match kind {
        RelationKind::Subring => {
            let lvl = level.ok_or_else(|| {
                Error::Shape("subring relation check needs a derived level".into())
            })?;
            Some(eval_x(lvl, d)?)
        }
        RelationKind::Normality => {
            if !d.sigma_fixes_t()? {
                return Err(Error::HypothesisFailure(
                    "normality needs σ(t) = t at horizon".into(),
                ));
            }
            None
        }
        RelationKind::Defining => None,
    };
    for r in span {
        let r_poly = SkewPoly::constant(r.clone(), d);
        let (lhs, rhs) = match kind {
            RelationKind::Defining => {
                let lhs = poly_mul(&SkewPoly::x(d)?, &r_poly)?;
                let sx = SkewPoly::new(
                    vec![Element::zero(&ring), d.sigma.apply(&r, false)?],
                    d.clone(),
                );
                let rhs = sx.add(&SkewPoly::constant(d.apply(&r)?, d))?;
                (lhs, rhs)
            }
            RelationKind::Normality => {
                let g = SkewPoly::x_minus_t(d)?;
                let lhs = poly_mul(&g, &r_poly)?;
                let rhs = poly_mul(&SkewPoly::constant(d.sigma.apply(&r, false)?, d), &g)?;
                (lhs, rhs)
            }
            RelationKind::Subring => {
                let lvl = level.unwrap();
                let xn = x_n.as_ref().unwrap();
                let lhs = poly_mul(xn, &r_poly)?;
                let sig_n_r = lvl.sigma_n.apply(&r, false)?;
                let rhs = poly_mul(&SkewPoly::constant(sig_n_r, d), xn)?
                    .add(&SkewPoly::constant(lvl.delta_n.apply(&r)?, d))?;
                (lhs, rhs)
            }
        };
        // "≡ 0 at precision": residual digits below the two sides' joint
        // precision floor are defects; digits at or above it are artifacts
        // of the two computation paths truncating at different depths. The
        // floor is taken over all coefficients because zero-at-precision
        // coefficients do not retain their individual markers.
        let n = lhs.coeffs.len().max(rhs.coeffs.len());
        let mut floor = i64::MAX;
        for k in 0..n {
            floor = floor
                .min(lhs.coeff(k)?.precision_floor())
                .min(rhs.coeff(k)?.precision_floor());
        }
        for k in 0..n {
            let diff = lhs.coeff(k)?.sub(&rhs.coeff(k)?)?;
            let defect = match diff.filt() {
                FiltValue::Finite(v) => v < floor,
                FiltValue::AtLeast(_) => false,
            };
            if defect {
                return Ok(CheckReport {
                    pass: false,
                    witness: Some(r),
                    detail: format!("{kind:?} relation fails at precision"),
                });
            }
        }
    }
    Ok(CheckReport {
        pass: true,
        witness: None,
        detail: format!("{kind:?} relation holds on the spanning set at precision"),
    })
}

// --- bounded series ---------------------------------------------------------

/// A derivation together with its quasi-compatibility certificate; the
/// certificate supplies the (B, N) data every series product needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifiedDeriv {
    pub spec: DerivSpec,
    pub cert: CompatCertificate,
}

impl PartialEq for CertifiedDeriv {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl CertifiedDeriv {
    pub fn new(spec: DerivSpec, horizon: i64, window: CertWindow) -> Result<CertifiedDeriv> {
        let cert = certify(&spec, horizon, window)?;
        Ok(CertifiedDeriv { spec, cert })
    }

    /// The tail-decay data (B, N); errors when the certificate cannot
    /// support series multiplication.
    pub fn tail_data(&self) -> Result<(i64, u32)> {
        if self.cert.mode == CertMode::Failed {
            return Err(Error::MissingCertificate(
                "certificate mode is failed; series products are undefined".into(),
            ));
        }
        let n = self.cert.n.ok_or_else(|| {
            Error::MissingCertificate("no N with deg(δ^N) ≥ 1 found in the window".into())
        })?;
        Ok((self.cert.b, n))
    }
}

/// A skew power series known through order K with a declared coefficient
/// filtration lower bound L (valid for the unrepresented tail too) and a
/// per-coefficient guarantee P_k: the filtration level below which the
/// stored c_k agrees with the true coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundedSeries {
    pub coeffs: Vec<Element>,
    /// Declared lower bound L: filt(c_n) ≥ L for all n including the tail.
    pub lower: i64,
    /// P_k for each stored coefficient.
    pub guarantees: Vec<i64>,
    /// True when every unstored coefficient is exactly zero (polynomial
    /// payloads); false when the tail is unknown beyond the L bound.
    pub tail_exact: bool,
    pub deriv: CertifiedDeriv,
}

impl BoundedSeries {
    pub fn k_order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Embed a polynomial: guarantees at full ring precision, exact tail.
    pub fn from_poly(poly: &SkewPoly, deriv: &CertifiedDeriv) -> Result<BoundedSeries> {
        if poly.deriv != deriv.spec {
            return Err(Error::DerivMismatch("poly vs certified deriv".into()));
        }
        let ring = deriv.spec.ring()?;
        let full = ring.cap();
        let coeffs = if poly.coeffs.is_empty() {
            vec![Element::zero(&ring)]
        } else {
            poly.coeffs.clone()
        };
        let lower = coeffs
            .iter()
            .map(|c| c.filt().lower_bound())
            .min()
            .unwrap_or(0)
            .min(full);
        let n = coeffs.len();
        Ok(BoundedSeries {
            coeffs,
            lower,
            guarantees: vec![full; n],
            tail_exact: true,
            deriv: deriv.clone(),
        })
    }

    /// Declare a series literal with an explicit tail bound L.
    pub fn new(
        coeffs: Vec<Element>,
        lower: i64,
        tail_exact: bool,
        deriv: &CertifiedDeriv,
    ) -> Result<BoundedSeries> {
        let ring = deriv.spec.ring()?;
        let full = ring.cap();
        for (k, c) in coeffs.iter().enumerate() {
            if c.filt().lower_bound() < lower {
                return Err(Error::Invariant(format!(
                    "coefficient {k} violates the declared lower bound {lower}"
                )));
            }
        }
        let n = coeffs.len().max(1);
        let coeffs = if coeffs.is_empty() {
            vec![Element::zero(&ring)]
        } else {
            coeffs
        };
        Ok(BoundedSeries {
            coeffs,
            lower,
            guarantees: vec![full; n],
            tail_exact,
            deriv: deriv.clone(),
        })
    }

    pub fn coeff(&self, k: usize) -> Result<Element> {
        match self.coeffs.get(k) {
            Some(c) => Ok(c.clone()),
            None => Ok(Element::zero(&self.deriv.spec.ring()?)),
        }
    }

    /// Guarantee for index k; beyond the stored range only the tail bound
    /// survives.
    pub fn guarantee(&self, k: usize) -> i64 {
        match self.guarantees.get(k) {
            Some(&g) => g,
            None => {
                if self.tail_exact {
                    self.deriv.spec.ring().map(|r| r.cap()).unwrap_or(i64::MAX)
                } else {
                    self.lower
                }
            }
        }
    }

    /// Left module action a·f of the coefficient ring (exact).
    pub fn scale_left(&self, a: &Element) -> Result<BoundedSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(a.mul(c)?);
        }
        let shift = a.filt().lower_bound();
        let full = self.deriv.spec.ring()?.cap();
        Ok(BoundedSeries {
            coeffs,
            lower: self.lower + shift,
            guarantees: self
                .guarantees
                .iter()
                .map(|&g| (g + shift).min(full))
                .collect(),
            tail_exact: self.tail_exact,
            deriv: self.deriv.clone(),
        })
    }

    pub fn add(&self, other: &BoundedSeries) -> Result<BoundedSeries> {
        if self.deriv != other.deriv {
            return Err(Error::DerivMismatch("series addition".into()));
        }
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        let mut guarantees = Vec::with_capacity(n);
        for k in 0..n {
            coeffs.push(self.coeff(k)?.add(&other.coeff(k)?)?);
            guarantees.push(self.guarantee(k).min(other.guarantee(k)));
        }
        Ok(BoundedSeries {
            coeffs,
            lower: self.lower.min(other.lower),
            guarantees,
            tail_exact: self.tail_exact && other.tail_exact,
            deriv: self.deriv.clone(),
        })
    }

    pub fn sub(&self, other: &BoundedSeries) -> Result<BoundedSeries> {
        let mut neg = other.clone();
        neg.coeffs = neg.coeffs.iter().map(|c| c.neg()).collect();
        self.add(&neg)
    }
}

/// Options controlling the internal i-cutoff of `series_mul`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MulOptions {
    /// Explicit cutoff override (used by the tail-soundness suites).
    pub k_in: Option<usize>,
    /// Requested per-coefficient guarantee; the cutoff is derived as
    /// K_in = K_out + N·(P_target − (L_f + L_g + B)).
    pub p_target: Option<i64>,
}

/// The bounded series product truncated at output order `k_out`.
///
/// The result's lower bound is L_f + L_g + B; stored coefficient k carries
/// the guarantee P_k = L_f + L_g + B + ⌊(K_in + 1 − k)/N⌋ (full ring
/// precision for exact polynomial tails). Both K_in and the achieved
/// guarantees are recorded in the result.
pub fn series_mul(
    f: &BoundedSeries,
    g: &BoundedSeries,
    k_out: usize,
    opts: MulOptions,
) -> Result<(BoundedSeries, usize)> {
    if f.deriv != g.deriv {
        return Err(Error::DerivMismatch("series_mul factors".into()));
    }
    let (b, n_idx) = f.deriv.tail_data()?;
    let d = &f.deriv.spec;
    let ring = d.ring()?;
    let full = ring.cap();
    let base = f.lower + g.lower + b;

    if !g.tail_exact && g.k_order() < k_out {
        return Err(Error::Shape(format!(
            "right factor stored to order {} < requested output order {k_out}",
            g.k_order()
        )));
    }

    let avail = if f.tail_exact {
        usize::MAX / 2
    } else {
        f.k_order()
    };
    let k_in = if let Some(k) = opts.k_in {
        k.min(avail)
    } else if let Some(p_target) = opts.p_target {
        let needed = if p_target <= base {
            k_out
        } else {
            k_out + n_idx as usize * (p_target - base) as usize
        };
        if needed > avail {
            let best = base + ((avail - k_out.min(avail)) / n_idx as usize) as i64;
            return Err(Error::GuaranteeUnreachable {
                requested: p_target,
                best,
            });
        }
        needed
    } else {
        f.k_order().max(k_out)
    };

    let mut out = vec![Element::zero(&ring); k_out + 1];
    let j_max = k_out.min(if g.tail_exact { g.k_order() } else { k_out });
    for j in 0..=j_max {
        let b_j = g.coeff(j)?;
        if b_j.is_zero() {
            continue;
        }
        // δ^d(b_j) for d = 0..=k_in.
        let mut delta_pows = Vec::with_capacity(k_in + 1);
        delta_pows.push(b_j);
        for _ in 0..k_in {
            let next = d.apply(delta_pows.last().unwrap())?;
            delta_pows.push(next);
        }
        for e in 0..=(k_out - j) {
            let k = e + j;
            let mut acc = Element::zero(&ring);
            for i in e..=k_in {
                let a_i = f.coeff(i)?;
                if a_i.is_zero() {
                    continue;
                }
                let mut img = delta_pows[i - e].clone();
                for _ in 0..e {
                    img = d.sigma.apply(&img, false)?;
                }
                let c = int_image(&ring, binom_u128(i as u64, e as u64), false);
                acc = acc.add(&a_i.mul(&c)?.mul(&img)?)?;
            }
            out[k] = out[k].add(&acc)?;
        }
    }

    let exact = f.tail_exact && g.tail_exact;
    let guarantees: Vec<i64> = (0..=k_out)
        .map(|k| {
            if exact {
                full
            } else if f.tail_exact {
                // only g's element-level precision limits the result
                full
            } else {
                (base + (k_in as i64 + 1 - k as i64).div_euclid(n_idx as i64)).min(full)
            }
        })
        .collect();
    let tail_exact =
        exact && f.k_order() + g.k_order() <= k_out;
    Ok((
        BoundedSeries {
            coeffs: out,
            lower: base,
            guarantees,
            tail_exact,
            deriv: f.deriv.clone(),
        },
        k_in,
    ))
}

/// Series agree when all coefficients match within the common guarantee.
pub fn series_agree(f: &BoundedSeries, g: &BoundedSeries) -> Result<bool> {
    let n = f.coeffs.len().max(g.coeffs.len());
    for k in 0..n {
        let (a, b) = (f.coeff(k)?, g.coeff(k)?);
        // Agreement is claimed up to the joint guarantee, but can only be
        // checked up to the joint precision floor of the representations;
        // a digit-free difference is agreement at whatever precision the
        // two computations shared.
        let bound = f
            .guarantee(k)
            .min(g.guarantee(k))
            .min(a.precision_floor())
            .min(b.precision_floor());
        let diff = a.sub(&b)?;
        match diff.filt() {
            FiltValue::Finite(v) if v < bound => return Ok(false),
            FiltValue::AtLeast(h) if h < bound && !diff.is_zero() => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

// --- the rescaled filtration v_ε --------------------------------------------

/// v_ε with ε = 1/m, reported as an integer after rescaling by m:
/// v(Σ s_n x^n) = min_n (m·w(s_n) + n), the tail entering through the
/// declared bound L as m·L + (K+1).
pub fn v_eps(f: &BoundedSeries, m: i64) -> Result<FiltValue> {
    if m < 1 {
        return Err(Error::OutOfRange("ε denominator must be ≥ 1".into()));
    }
    let tail = if f.tail_exact {
        None
    } else {
        Some(FiltValue::AtLeast(m * f.lower + f.coeffs.len() as i64))
    };
    let mut best = tail.unwrap_or(FiltValue::AtLeast(i64::MAX - 1));
    for (k, c) in f.coeffs.iter().enumerate() {
        let p_k = f.guarantee(k);
        let scaled = match c.filt() {
            FiltValue::Finite(v) if v < p_k => FiltValue::Finite(m * v + k as i64),
            other => FiltValue::AtLeast(m * other.lower_bound().min(p_k) + k as i64),
        };
        best = best.min(scaled);
    }
    Ok(best)
}

// --- seeded generation ------------------------------------------------------

/// Random bounded series with exact polynomial payload of order `k`.
pub fn random_series(
    deriv: &CertifiedDeriv,
    k: usize,
    rng: &mut SplitMix64,
) -> Result<BoundedSeries> {
    let ring = deriv.spec.ring()?;
    let coeffs: Vec<Element> = (0..=k).map(|_| random_element(&ring, rng)).collect();
    let poly = SkewPoly::new(coeffs, deriv.spec.clone());
    BoundedSeries::from_poly(&poly, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffring::RingSpec;
    use crate::skewmaps::{AutoPrimitive, AutoSpec};

    fn laurent(p: u64, relprec: u32) -> RingSpec {
        RingSpec::TruncLaurent {
            p,
            relprec,
            cap: 64,
        }
    }

    fn iwasawa(relprec: u32) -> DerivSpec {
        let r = laurent(3, relprec);
        let f = Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        };
        DerivSpec::inner(Element::from_int(&r, -1), sigma)
    }

    fn iwasawa_certified(relprec: u32) -> CertifiedDeriv {
        CertifiedDeriv::new(iwasawa(relprec), 6, CertWindow::default()).unwrap()
    }

    /// Independent oracle: multiply by pushing x through one step at a
    /// time with the defining relation only (no binomial expansion).
    fn naive_mul(f: &SkewPoly, g: &SkewPoly) -> SkewPoly {
        let d = &f.deriv;
        let ring = d.ring().unwrap();
        // x·(Σ c_k x^k) = Σ (σ(c_k) x^{k+1} + δ(c_k) x^k)
        let mul_by_x = |p: &SkewPoly| -> SkewPoly {
            let mut out = vec![Element::zero(&ring); p.coeffs.len() + 1];
            for (k, c) in p.coeffs.iter().enumerate() {
                out[k + 1] = out[k + 1]
                    .add(&d.sigma.apply(c, false).unwrap())
                    .unwrap();
                out[k] = out[k].add(&d.apply(c).unwrap()).unwrap();
            }
            SkewPoly::new(out, d.clone())
        };
        let mut acc = SkewPoly::zero(d);
        let mut xig = g.clone(); // x^i·g
        for a_i in &f.coeffs {
            acc = acc.add(&xig.scale_left(a_i).unwrap()).unwrap();
            xig = mul_by_x(&xig);
        }
        acc
    }

    #[test]
    fn x_times_pi_follows_the_defining_relation() {
        // x·π = σ(π)·x + δ(π) = (π+π²)·x − π³ with Inner(π) over
        // TruncLaurent(3,3).
        let r = laurent(3, 3);
        let f = Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        };
        let d = DerivSpec::inner(Element::pi_pow(&r, 1).unwrap(), sigma);
        let x = SkewPoly::x(&d).unwrap();
        let pi = SkewPoly::constant(Element::pi_pow(&r, 1).unwrap(), &d);
        let prod = poly_mul(&x, &pi).unwrap();
        assert_eq!(
            prod.coeffs[1],
            Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap()
        );
        assert!(prod.coeffs[0].filt().ge(3));
    }

    #[test]
    fn unit_law_and_x_squared() {
        let d = iwasawa(4);
        let one = SkewPoly::one(&d).unwrap();
        let x = SkewPoly::x(&d).unwrap();
        let g = SkewPoly::new(
            vec![
                Element::pi_pow(&d.ring().unwrap(), 2).unwrap(),
                Element::one(&d.ring().unwrap()),
            ],
            d.clone(),
        );
        assert_eq!(poly_mul(&one, &g).unwrap(), g);
        let x2 = poly_mul(&x, &x).unwrap();
        assert_eq!(x2.degree(), Some(2));
        assert!(x2.coeffs[0].is_zero());
        assert!(x2.coeffs[1].is_zero());
    }

    #[test]
    fn poly_mul_matches_naive_rewriting_oracle() {
        let d = iwasawa(6);
        let ring = d.ring().unwrap();
        let mut rng = SplitMix64::new(31);
        for _ in 0..20 {
            let f = SkewPoly::new(
                (0..4).map(|_| random_element(&ring, &mut rng)).collect(),
                d.clone(),
            );
            let g = SkewPoly::new(
                (0..4).map(|_| random_element(&ring, &mut rng)).collect(),
                d.clone(),
            );
            let fast = poly_mul(&f, &g).unwrap();
            let slow = naive_mul(&f, &g);
            assert!(fast.sub(&slow).unwrap().is_zero());
        }
    }

    #[test]
    fn poly_mul_is_associative() {
        let d = iwasawa(6);
        let ring = d.ring().unwrap();
        let mut rng = SplitMix64::new(37);
        for _ in 0..10 {
            let polys: Vec<SkewPoly> = (0..3)
                .map(|_| {
                    SkewPoly::new(
                        (0..3).map(|_| random_element(&ring, &mut rng)).collect(),
                        d.clone(),
                    )
                })
                .collect();
            let lhs = poly_mul(&poly_mul(&polys[0], &polys[1]).unwrap(), &polys[2]).unwrap();
            let rhs = poly_mul(&polys[0], &poly_mul(&polys[1], &polys[2]).unwrap()).unwrap();
            assert!(lhs.sub(&rhs).unwrap().is_zero());
        }
    }

    #[test]
    fn eval_x_iwasawa_level_one_is_x_cubed() {
        let d = iwasawa(6);
        let lvl = crate::skewmaps::derive_level(&d, 1).unwrap();
        let x1 = eval_x(&lvl, &d).unwrap();
        let x = SkewPoly::x(&d).unwrap();
        let x3 = poly_pow(&x, 3).unwrap();
        assert!(x1.sub(&x3).unwrap().is_zero());
    }

    #[test]
    fn eval_x_zmod_surrogate() {
        // Zmod(3,2), t = −1, σ = id, n = 1: (x+1)³ − 1 = x³ + 3x² + 3x.
        let r = RingSpec::Zmod { p: 3, n: 2 };
        let d = DerivSpec::inner(Element::from_int(&r, -1), AutoSpec::identity());
        let lvl = crate::skewmaps::derive_level(&d, 1).unwrap();
        let x1 = eval_x(&lvl, &d).unwrap();
        let expected: Vec<i64> = vec![0, 3, 3, 1];
        assert_eq!(x1.coeffs.len(), 4);
        for (k, &c) in expected.iter().enumerate() {
            assert_eq!(x1.coeffs[k], Element::from_int(&r, c), "coeff {k}");
        }
    }

    #[test]
    fn relation_checks_pass_on_iwasawa() {
        let d = iwasawa(6);
        let lvl = crate::skewmaps::derive_level(&d, 1).unwrap();
        for (kind, level) in [
            (RelationKind::Defining, None),
            (RelationKind::Normality, None),
            (RelationKind::Subring, Some(&lvl)),
        ] {
            let report = relation_check(kind, &d, level, -3, 3).unwrap();
            assert!(report.pass, "{}", report.detail);
        }
    }

    #[test]
    fn series_of_constants_multiply_trivially() {
        let cd = iwasawa_certified(6);
        let one = BoundedSeries::from_poly(&SkewPoly::one(&cd.spec).unwrap(), &cd).unwrap();
        let (prod, _) = series_mul(&one, &one, 0, MulOptions::default()).unwrap();
        assert_eq!(prod.coeffs[0], Element::one(&cd.spec.ring().unwrap()));
        assert_eq!(prod.guarantees[0], 64); // full ring precision
    }

    #[test]
    fn series_mul_agrees_with_poly_mul_embedding() {
        let cd = iwasawa_certified(6);
        let ring = cd.spec.ring().unwrap();
        let mut rng = SplitMix64::new(41);
        for _ in 0..10 {
            let f = SkewPoly::new(
                (0..3).map(|_| random_element(&ring, &mut rng)).collect(),
                cd.spec.clone(),
            );
            let g = SkewPoly::new(
                (0..3).map(|_| random_element(&ring, &mut rng)).collect(),
                cd.spec.clone(),
            );
            let fp = poly_mul(&f, &g).unwrap();
            let fs = BoundedSeries::from_poly(&f, &cd).unwrap();
            let gs = BoundedSeries::from_poly(&g, &cd).unwrap();
            let k_out = 4;
            let (prod, _) = series_mul(&fs, &gs, k_out, MulOptions::default()).unwrap();
            for k in 0..=k_out {
                let want = fp
                    .coeffs
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| Element::zero(&ring));
                assert!(prod.coeffs[k].sub(&want).unwrap().is_zero(), "coeff {k}");
            }
        }
    }

    #[test]
    fn iwasawa_partial_sum_example() {
        // f = Σ_{n≤K} π·x^n, g = Σ_{n≤K} x^n, K_out = 4: coefficients match
        // the partial-sum polynomial product (the inputs are their own
        // partial sums).
        let cd = iwasawa_certified(6);
        let ring = cd.spec.ring().unwrap();
        let k = 6usize;
        let pi = Element::pi_pow(&ring, 1).unwrap();
        let f = SkewPoly::new(vec![pi.clone(); k + 1], cd.spec.clone());
        let g = SkewPoly::new(vec![Element::one(&ring); k + 1], cd.spec.clone());
        let fs = BoundedSeries::from_poly(&f, &cd).unwrap();
        let gs = BoundedSeries::from_poly(&g, &cd).unwrap();
        let (prod, k_in) = series_mul(&fs, &gs, 4, MulOptions::default()).unwrap();
        let oracle = poly_mul(&f, &g).unwrap();
        for k in 0..=4 {
            assert!(
                prod.coeffs[k].sub(&oracle.coeffs[k]).unwrap().is_zero(),
                "coeff {k} differs from the partial-sum oracle"
            );
        }
        assert!(k_in >= 4);
    }

    #[test]
    fn tail_soundness_larger_cutoff_respects_guarantee() {
        let cd = iwasawa_certified(8);
        let ring = cd.spec.ring().unwrap();
        let mut rng = SplitMix64::new(43);
        // A series literal with unknown tail: stored to order 12, L = 0.
        let coeffs: Vec<Element> = (0..=12)
            .map(|_| {
                let mut e = random_element(&ring, &mut rng);
                while e.filt().lower_bound() < 0 {
                    e = random_element(&ring, &mut rng);
                }
                e
            })
            .collect();
        let f = BoundedSeries::new(coeffs.clone(), 0, false, &cd).unwrap();
        let g = BoundedSeries::new(coeffs, 0, false, &cd).unwrap();
        let (small, _) = series_mul(
            &f,
            &g,
            3,
            MulOptions {
                k_in: Some(6),
                p_target: None,
            },
        )
        .unwrap();
        let (large, _) = series_mul(
            &f,
            &g,
            3,
            MulOptions {
                k_in: Some(12),
                p_target: None,
            },
        )
        .unwrap();
        for k in 0..=3 {
            let diff = small.coeffs[k].sub(&large.coeffs[k]).unwrap();
            assert!(
                diff.filt().ge(small.guarantees[k]),
                "coeff {k} moved inside the reported guarantee: diff filt {:?} < {}",
                diff.filt(),
                small.guarantees[k]
            );
        }
    }

    #[test]
    fn guarantee_unreachable_is_reported() {
        let cd = iwasawa_certified(6);
        let ring = cd.spec.ring().unwrap();
        let f = BoundedSeries::new(vec![Element::one(&ring); 3], 0, false, &cd).unwrap();
        let err = series_mul(
            &f,
            &f.clone(),
            2,
            MulOptions {
                k_in: None,
                p_target: Some(50),
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::GuaranteeUnreachable { .. }));
    }

    #[test]
    fn v_eps_examples() {
        let cd = iwasawa_certified(6);
        let ring = cd.spec.ring().unwrap();
        // f = x, m = 2 → 2·w(1) + 1 = 1.
        let x = BoundedSeries::from_poly(&SkewPoly::x(&cd.spec).unwrap(), &cd).unwrap();
        assert_eq!(v_eps(&x, 2).unwrap(), FiltValue::Finite(1));
        // f = π·x⁰, m = 1 → 1.
        let pi = BoundedSeries::from_poly(
            &SkewPoly::constant(Element::pi_pow(&ring, 1).unwrap(), &cd.spec),
            &cd,
        )
        .unwrap();
        assert_eq!(v_eps(&pi, 1).unwrap(), FiltValue::Finite(1));
        // zero series with declared tail bound L = 5, K = 0.
        let z = BoundedSeries::new(vec![Element::zero(&ring)], 5, false, &cd).unwrap();
        match v_eps(&z, 1).unwrap() {
            FiltValue::AtLeast(h) => assert_eq!(h, 6.min(64)),
            other => panic!("expected a tail-only lower bound, got {other:?}"),
        }
    }

    #[test]
    fn left_module_compatibility() {
        // (a·f)·g = a·(f·g) exactly.
        let cd = iwasawa_certified(6);
        let ring = cd.spec.ring().unwrap();
        let mut rng = SplitMix64::new(47);
        let a = random_element(&ring, &mut rng);
        let f = random_series(&cd, 3, &mut rng).unwrap();
        let g = random_series(&cd, 3, &mut rng).unwrap();
        let (fg, _) = series_mul(&f, &g, 4, MulOptions::default()).unwrap();
        let lhs = series_mul(&f.scale_left(&a).unwrap(), &g, 4, MulOptions::default())
            .unwrap()
            .0;
        let rhs = fg.scale_left(&a).unwrap();
        for k in 0..=4 {
            assert!(lhs.coeffs[k].sub(&rhs.coeffs[k]).unwrap().is_zero());
        }
    }
}
