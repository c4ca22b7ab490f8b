//! Automorphisms and σ-derivations: representation, application,
//! boundedness/compatibility certification, and the derived level-n data
//! (Σ_n, Δ_n, T_n).

use crate::coeffring::{binom_u128, int_image, spanning_set, Element, Payload, RingSpec};
use crate::error::{Error, Result};
use crate::filt::FiltValue;
use serde::{Deserialize, Serialize};

// --- automorphisms ----------------------------------------------------------

/// A primitive automorphism. Each primitive supplies both a forward and an
/// inverse application; the inverse of a chain is the reversed chain of
/// primitive inverses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AutoPrimitive {
    /// Substitution π ↦ f(π) on the Laurent base, f of valuation 1 with
    /// unit leading coefficient; extends to all of F_p((π)) by continuity
    /// (π^v·u ↦ f^v·u(f)) and coefficientwise through Matrix/Product.
    Subst { f: Element },
    /// Inner automorphism x ↦ a·x·a^{-1}.
    Conj { a: Element },
    /// Rotation of the factors of a Product ring by k places.
    CycleShift { k: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoSpec {
    pub chain: Vec<AutoPrimitive>,
}

impl AutoPrimitive {
    fn validate(&self) -> Result<()> {
        match self {
            AutoPrimitive::Subst { f } => {
                let l = f
                    .laurent()
                    .ok_or_else(|| Error::Shape("Subst needs a TruncLaurent element".into()))?;
                if l.digits.is_empty() || l.val != 1 {
                    return Err(Error::Shape(
                        "Subst substituend must have valuation 1 with unit leading coefficient"
                            .into(),
                    ));
                }
                Ok(())
            }
            AutoPrimitive::Conj { a } => {
                a.invert()
                    .map_err(|e| Error::Shape(format!("Conj element is not a unit: {e}")))?;
                Ok(())
            }
            AutoPrimitive::CycleShift { .. } => Ok(()),
        }
    }

    fn inverse(&self) -> Result<AutoPrimitive> {
        match self {
            AutoPrimitive::Subst { f } => Ok(AutoPrimitive::Subst { f: revert(f)? }),
            AutoPrimitive::Conj { a } => Ok(AutoPrimitive::Conj { a: a.invert()? }),
            AutoPrimitive::CycleShift { k } => Ok(AutoPrimitive::CycleShift { k: -k }),
        }
    }

    fn apply(&self, x: &Element) -> Result<Element> {
        match self {
            AutoPrimitive::Subst { f } => subst_apply(f, x),
            AutoPrimitive::Conj { a } => {
                if a.ring != x.ring {
                    return Err(Error::RingMismatch("Conj element vs argument".into()));
                }
                a.mul(x)?.mul(&a.invert()?)
            }
            AutoPrimitive::CycleShift { k } => cycle_shift(*k, x),
        }
    }
}

/// Substitution applied by continuity: π^v·u ↦ f^v·u(f); entrywise through
/// matrix and product shapes. Preserves relative precision (f has
/// valuation 1, so valuations are preserved).
fn subst_apply(f: &Element, x: &Element) -> Result<Element> {
    match &x.payload {
        Payload::Laurent(l) => {
            if l.digits.is_empty() {
                return Ok(x.clone());
            }
            // Horner evaluation of the unit part at f, then shift by f^val.
            let ring = &x.ring;
            let mut acc = Element::zero(ring);
            for &d in l.digits.iter().rev() {
                acc = acc.mul(f)?.add(&Element::from_int(ring, d as i64))?;
            }
            f.pow_i64(l.val)?.mul(&acc)
        }
        Payload::Matrix(es) => {
            let out: Result<Vec<Element>> = es.iter().map(|e| subst_apply(f, e)).collect();
            Element::from_entries(&x.ring, out?)
        }
        Payload::Product(es) => {
            let out: Result<Vec<Element>> = es.iter().map(|e| subst_apply(f, e)).collect();
            Element::from_factors(&x.ring, out?)
        }
        Payload::Zmod(_) => Err(Error::Shape("Subst does not apply to Zmod".into())),
    }
}

/// Compositional inverse g of f (f, g of valuation 1), i.e. f(g(π)) ≡ π up
/// to the relative precision window, solved digit by digit.
fn revert(f: &Element) -> Result<Element> {
    let ring = f.ring.clone();
    let relprec = match &ring {
        RingSpec::TruncLaurent { relprec, .. } => *relprec,
        _ => return Err(Error::Shape("reversion needs a TruncLaurent element".into())),
    };
    let l = f
        .laurent()
        .ok_or_else(|| Error::Shape("reversion needs a Laurent payload".into()))?;
    if l.digits.is_empty() || l.val != 1 {
        return Err(Error::Shape("reversion needs valuation exactly 1".into()));
    }
    let f1_inv = Element::from_int(&ring, l.digits[0] as i64).invert()?;
    // g starts as f1^{-1}·π; each round fixes one more digit from the defect
    // π − f(g).
    let pi = Element::pi_pow(&ring, 1)?;
    let mut g = f1_inv.mul(&pi)?;
    for k in 2..=relprec as i64 {
        let defect = pi.sub(&subst_apply(f, &g)?)?;
        match defect.filt() {
            FiltValue::Finite(v) if v < k => {
                debug_assert_eq!(v, k);
                unreachable!("reversion defect dropped below the fixed digit");
            }
            FiltValue::Finite(v) if v == k => {
                let d = defect.laurent().unwrap().digits[0];
                let corr = f1_inv
                    .mul(&Element::from_laurent_digits(&ring, k, &[d])?)?;
                g = g.add(&corr)?;
            }
            _ => {} // already ≡ π beyond this digit
        }
    }
    Ok(g)
}

fn cycle_shift(k: i64, x: &Element) -> Result<Element> {
    let factors = match &x.ring {
        RingSpec::Product { factors } => factors,
        _ => return Err(Error::Shape("CycleShift needs a Product ring".into())),
    };
    let r = factors.len();
    if factors.iter().any(|f| f != &factors[0]) {
        return Err(Error::Shape(
            "CycleShift needs identical product factors".into(),
        ));
    }
    let parts = x.factors().unwrap();
    let mut out = vec![Element::zero(&factors[0]); r];
    for (i, part) in parts.iter().enumerate() {
        let j = (i as i64 + k).rem_euclid(r as i64) as usize;
        out[j] = part.clone();
    }
    Element::from_factors(&x.ring, out)
}

impl AutoSpec {
    pub fn identity() -> AutoSpec {
        AutoSpec { chain: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        for prim in &self.chain {
            prim.validate()?;
        }
        Ok(())
    }

    /// The inverse automorphism: reversed chain of primitive inverses.
    pub fn inverse(&self) -> Result<AutoSpec> {
        let mut chain = Vec::with_capacity(self.chain.len());
        for prim in self.chain.iter().rev() {
            chain.push(prim.inverse()?);
        }
        Ok(AutoSpec { chain })
    }

    /// The m-fold composite (m ≥ 0) as an explicit chain.
    pub fn repeat(&self, m: u32) -> AutoSpec {
        let mut chain = vec![];
        for _ in 0..m {
            chain.extend(self.chain.iter().cloned());
        }
        AutoSpec { chain }
    }

    pub fn apply(&self, x: &Element, inverse: bool) -> Result<Element> {
        if inverse {
            return self.inverse()?.apply(x, false);
        }
        let mut y = x.clone();
        for prim in &self.chain {
            y = prim.apply(&y)?;
        }
        Ok(y)
    }

    /// σ^i for i of either sign.
    pub fn apply_pow(&self, x: &Element, i: i64) -> Result<Element> {
        let (map, n) = if i < 0 {
            (self.inverse()?, (-i) as u32)
        } else {
            (self.clone(), i as u32)
        };
        let mut y = x.clone();
        for _ in 0..n {
            y = map.apply(&y, false)?;
        }
        Ok(y)
    }

    pub fn is_identity_on(&self, x: &Element) -> Result<bool> {
        Ok(self.apply(x, false)?.sub(x)?.is_zero())
    }
}

// --- derivations ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivForm {
    /// Inner σ-derivation δ(s) = t·s − σ(s)·t.
    Inner { t: Element },
    /// σ-twisted derivation of the Laurent base determined by θ(π), via the
    /// twisted Leibniz rule; char p only, extended entrywise.
    BaseTwisted { theta_pi: Element },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivSpec {
    pub form: DerivForm,
    pub sigma: AutoSpec,
}

impl DerivSpec {
    pub fn inner(t: Element, sigma: AutoSpec) -> DerivSpec {
        DerivSpec {
            form: DerivForm::Inner { t },
            sigma,
        }
    }

    pub fn ring(&self) -> Result<RingSpec> {
        match &self.form {
            DerivForm::Inner { t } => Ok(t.ring.clone()),
            DerivForm::BaseTwisted { theta_pi } => Ok(theta_pi.ring.clone()),
        }
    }

    pub fn validate(&self, ring: &RingSpec) -> Result<()> {
        self.sigma.validate()?;
        match &self.form {
            DerivForm::Inner { t } => {
                if &t.ring != ring {
                    return Err(Error::RingMismatch("Inner element vs session ring".into()));
                }
                Ok(())
            }
            DerivForm::BaseTwisted { theta_pi } => {
                if ring.char_p().is_none() {
                    return Err(Error::Shape(
                        "BaseTwisted is restricted to char-p Laurent-based rings".into(),
                    ));
                }
                if theta_pi.laurent().is_none() {
                    return Err(Error::Shape(
                        "BaseTwisted θ(π) must be a TruncLaurent element".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// δ(x). Inner form computes t·x − σ(x)·t exactly; BaseTwisted extends
    /// from θ(π) by the twisted Leibniz rule δ(rs) = δ(r)s + σ(r)δ(s), with
    /// θ(π^{-1}) = −σ(π)^{-1}·θ(π)·π^{-1}.
    pub fn apply(&self, x: &Element) -> Result<Element> {
        match &self.form {
            DerivForm::Inner { t } => {
                let sx = self.sigma.apply(x, false)?;
                t.mul(x)?.sub(&sx.mul(t)?)
            }
            DerivForm::BaseTwisted { theta_pi } => self.base_twisted_apply(theta_pi, x),
        }
    }

    fn base_twisted_apply(&self, theta_pi: &Element, x: &Element) -> Result<Element> {
        match &x.payload {
            Payload::Laurent(l) => {
                let ring = &x.ring;
                if l.digits.is_empty() {
                    return Ok(x.clone());
                }
                let mut acc = Element::zero(ring);
                for (i, &d) in l.digits.iter().enumerate() {
                    if d == 0 {
                        continue;
                    }
                    let e = l.val + i as i64;
                    let term = self.theta_pi_power(theta_pi, e)?;
                    acc = acc.add(&term.scale_int(d as i64))?;
                }
                Ok(acc)
            }
            Payload::Matrix(es) => {
                let out: Result<Vec<Element>> =
                    es.iter().map(|e| self.base_twisted_apply(theta_pi, e)).collect();
                Element::from_entries(&x.ring, out?)
            }
            Payload::Product(es) => {
                let out: Result<Vec<Element>> =
                    es.iter().map(|e| self.base_twisted_apply(theta_pi, e)).collect();
                Element::from_factors(&x.ring, out?)
            }
            Payload::Zmod(_) => Err(Error::Shape("BaseTwisted does not apply to Zmod".into())),
        }
    }

    /// θ(π^e) via the twisted Leibniz power rule: for a base b with known
    /// θ(b), θ(b^m) = Σ_{k<m} σ(b)^k · θ(b) · b^{m-1-k}.
    fn theta_pi_power(&self, theta_pi: &Element, e: i64) -> Result<Element> {
        let ring = theta_pi.ring.clone();
        if e == 0 {
            return Ok(Element::zero(&ring));
        }
        let pi = Element::pi_pow(&ring, 1)?;
        let (b, theta_b, m) = if e > 0 {
            (pi.clone(), theta_pi.clone(), e)
        } else {
            let b = Element::pi_pow(&ring, -1)?;
            let sigma_pi_inv = self.sigma.apply(&pi, false)?.invert()?;
            let theta_b = sigma_pi_inv.mul(theta_pi)?.mul(&b)?.neg();
            (b, theta_b, -e)
        };
        let sigma_b = self.sigma.apply(&b, false)?;
        let mut acc = Element::zero(&ring);
        for k in 0..m {
            let term = sigma_b
                .pow_i64(k)?
                .mul(&theta_b)?
                .mul(&b.pow_i64(m - 1 - k)?)?;
            acc = acc.add(&term)?;
        }
        Ok(acc)
    }

    /// n-fold application of δ.
    pub fn apply_n(&self, x: &Element, n: u32) -> Result<Element> {
        let mut y = x.clone();
        for _ in 0..n {
            y = self.apply(&y)?;
        }
        Ok(y)
    }

    /// For the Inner form: check σ(t) ≡ t at the available precision.
    pub fn sigma_fixes_t(&self) -> Result<bool> {
        match &self.form {
            DerivForm::Inner { t } => self.sigma.is_identity_on(t),
            DerivForm::BaseTwisted { .. } => Ok(false),
        }
    }
}

/// Closed form for powers of an inner δ with σ(t) = t:
/// δ^n(s) = Σ_{k=0}^n C(n,k)·(−1)^k·t^{n−k}·σ^k(s)·t^k.
pub fn delta_power_closed(d: &DerivSpec, n: u32, s: &Element) -> Result<Element> {
    let t = match &d.form {
        DerivForm::Inner { t } => t,
        _ => return Err(Error::Shape("closed form needs the Inner form".into())),
    };
    if !d.sigma_fixes_t()? {
        return Err(Error::HypothesisFailure("σ(t) ≠ t at horizon".into()));
    }
    let ring = &t.ring;
    let mut acc = Element::zero(ring);
    for k in 0..=n as u64 {
        let c = binom_u128(n as u64, k);
        let coeff = int_image(ring, c, k % 2 == 1);
        let term = coeff
            .mul(&t.pow_i64(n as i64 - k as i64)?)?
            .mul(&d.sigma.apply_pow(s, k as i64)?)?
            .mul(&t.pow_i64(k as i64)?)?;
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

// --- certification ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    Compatible,
    Quasi,
    StronglyBoundedOnly,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    /// The cell/element realizing the window-wide minimal observed degree.
    WindowMin,
    /// The element realizing the minimal observed degree of σ − id.
    SigmaMinusId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegWitness {
    pub kind: WitnessKind,
    /// σ-power and δ-power of the cell realizing the observed degree.
    pub i: i64,
    pub j: u32,
    pub element: Element,
    pub observed: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureWitness {
    pub description: String,
    pub cell: (i64, u32),
    pub element: Element,
    pub observed_full: i64,
    pub observed_half: i64,
}

/// Machine-checked record of strong boundedness / (quasi-)compatibility,
/// explicitly "verified at horizon": every claim quantifies over the
/// canonical spanning set and the sampled window only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompatCertificate {
    /// Lower bound for deg(σ^i δ^j) over the sampled window.
    pub b: i64,
    /// Least index with observed deg(δ^N) ≥ 1, when one exists in range.
    pub n: Option<u32>,
    pub mode: CertMode,
    pub horizon: i64,
    pub window: CertWindow,
    pub witnesses: Vec<DegWitness>,
    pub failure_witness: Option<FailureWitness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertWindow {
    pub i_lo: i64,
    pub i_hi: i64,
    pub j_hi: u32,
    pub n_max: u32,
    pub span_lo: i64,
}

impl Default for CertWindow {
    fn default() -> Self {
        CertWindow {
            i_lo: -8,
            i_hi: 8,
            j_hi: 16,
            n_max: 32,
            span_lo: -8,
        }
    }
}

/// Evaluate observed degree lower bounds of σ^i δ^j over the spanning set
/// and classify the pair (σ, δ).
///
/// The unboundedness test is a stability check: the minimum over the full
/// window is compared with the minimum over the half-size window; a bound
/// that keeps degrading as the window grows is classified `failed`, with
/// the degrading cell as witness. This is a horizon-limited check, not a
/// proof about the untruncated ring.
pub fn certify(d: &DerivSpec, horizon: i64, window: CertWindow) -> Result<CompatCertificate> {
    let ring = d.ring()?;
    let span = spanning_set(&ring, window.span_lo, horizon);
    let sigma_inv = d.sigma.inverse()?;

    // table[(i, j)] = (min observed degree bound, witness element)
    let i_range: Vec<i64> = (window.i_lo..=window.i_hi).collect();
    let j_range: Vec<u32> = (0..=window.j_hi).collect();
    let mut table: Vec<Vec<Option<(i64, Element)>>> =
        vec![vec![None; j_range.len()]; i_range.len()];
    let mut sig_minus_id: Option<(i64, Element)> = None;

    for r in &span {
        let wr = match r.filt() {
            FiltValue::Finite(v) => v,
            FiltValue::AtLeast(_) => continue,
        };
        // deg(σ − id) on r.
        let diff = d.sigma.apply(r, false)?.sub(r)?;
        let dobs = diff.filt().lower_bound() - wr;
        if sig_minus_id.as_ref().map_or(true, |(m, _)| dobs < *m) {
            sig_minus_id = Some((dobs, r.clone()));
        }
        // Walk δ-powers once, then σ-powers in both directions.
        let mut dj = r.clone();
        for (jx, &j) in j_range.iter().enumerate() {
            if j > 0 {
                dj = d.apply(&dj)?;
            }
            // Reach σ^i(δ^j r) incrementally in both directions from i = 0.
            let zero_ix = i_range.iter().position(|&i| i == 0).unwrap();
            record(&mut table[zero_ix][jx], dj.filt().lower_bound() - wr, r);
            let mut fwd = dj.clone();
            for step in 1..=window.i_hi.max(0) {
                fwd = d.sigma.apply(&fwd, false)?;
                if let Some(ix) = i_range.iter().position(|&i| i == step) {
                    record(&mut table[ix][jx], fwd.filt().lower_bound() - wr, r);
                }
            }
            let mut bwd = dj.clone();
            for step in 1..=(-window.i_lo).max(0) {
                bwd = sigma_inv.apply(&bwd, false)?;
                if let Some(ix) = i_range.iter().position(|&i| i == -step) {
                    record(&mut table[ix][jx], bwd.filt().lower_bound() - wr, r);
                }
            }
        }
    }

    // Minima over the full and half windows.
    let half_i = (window.i_lo / 2, window.i_hi / 2);
    let half_j = window.j_hi / 2;
    let mut full_min: Option<(i64, i64, u32, Element)> = None;
    let mut half_min: Option<i64> = None;
    for (ix, &i) in i_range.iter().enumerate() {
        for (jx, &j) in j_range.iter().enumerate() {
            if let Some((v, ref w)) = table[ix][jx] {
                if full_min.as_ref().map_or(true, |(m, ..)| v < *m) {
                    full_min = Some((v, i, j, w.clone()));
                }
                if i >= half_i.0 && i <= half_i.1 && j <= half_j {
                    if half_min.map_or(true, |m| v < m) {
                        half_min = Some(v);
                    }
                }
            }
        }
    }
    let (b, wi, wj, welt) = full_min.ok_or_else(|| {
        Error::Invariant("empty certification table (no finite spanning elements)".into())
    })?;
    let half = half_min.unwrap_or(b);

    // Least N ≤ N_max with observed deg(δ^N) ≥ 1.
    let zero_ix = i_range.iter().position(|&i| i == 0).unwrap();
    let mut n_found = None;
    for &j in j_range.iter().skip(1) {
        if j > window.n_max {
            break;
        }
        if let Some((v, _)) = &table[zero_ix][j as usize] {
            if *v >= 1 {
                n_found = Some(j);
                break;
            }
        }
    }

    let mut witnesses = vec![DegWitness {
        kind: WitnessKind::WindowMin,
        i: wi,
        j: wj,
        element: welt.clone(),
        observed: b,
    }];
    if let Some((v, w)) = &sig_minus_id {
        witnesses.push(DegWitness {
            kind: WitnessKind::SigmaMinusId,
            i: 1,
            j: 0,
            element: w.clone(),
            observed: *v,
        });
    }

    let failed = b < half;
    let mode = if failed {
        CertMode::Failed
    } else {
        let sig_ok = sig_minus_id.as_ref().map_or(false, |(v, _)| *v >= 1);
        let delta_ok = table[zero_ix][1].as_ref().map_or(false, |(v, _)| *v >= 1);
        if sig_ok && delta_ok {
            CertMode::Compatible
        } else if n_found.is_some() {
            CertMode::Quasi
        } else {
            CertMode::StronglyBoundedOnly
        }
    };
    let failure_witness = if failed {
        Some(FailureWitness {
            description: format!(
                "deg(sigma^{wi} delta^{wj}) degrades with the window: \
                 {b} over the full window vs {half} over the half window — \
                 unbounded below at horizon"
            ),
            cell: (wi, wj),
            element: welt,
            observed_full: b,
            observed_half: half,
        })
    } else {
        None
    };

    Ok(CompatCertificate {
        b,
        n: n_found,
        mode,
        horizon,
        window,
        witnesses,
        failure_witness,
    })
}

fn record(slot: &mut Option<(i64, Element)>, v: i64, witness: &Element) {
    if slot.as_ref().map_or(true, |(m, _)| v < *m) {
        *slot = Some((v, witness.clone()));
    }
}

/// Re-evaluate every Finite degree claim of a certificate on its stored
/// witnesses.
pub fn reverify_certificate(d: &DerivSpec, cert: &CompatCertificate) -> Result<bool> {
    for w in &cert.witnesses {
        let wr = match w.element.filt() {
            FiltValue::Finite(v) => v,
            _ => return Ok(false),
        };
        let img = match w.kind {
            WitnessKind::SigmaMinusId => d.sigma.apply(&w.element, false)?.sub(&w.element)?,
            WitnessKind::WindowMin => d.sigma.apply_pow(&d.apply_n(&w.element, w.j)?, w.i)?,
        };
        if img.filt().lower_bound() - wr != w.observed {
            return Ok(false);
        }
    }
    Ok(true)
}

// --- commuting check --------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub pass: bool,
    pub witness: Option<Element>,
    pub detail: String,
}

/// Verify σδ = δσ on the spanning set at horizon.
pub fn check_commuting(d: &DerivSpec, horizon: i64, span_lo: i64) -> Result<CheckReport> {
    let ring = d.ring()?;
    for r in spanning_set(&ring, span_lo, horizon) {
        let lhs = d.sigma.apply(&d.apply(&r)?, false)?;
        let rhs = d.apply(&d.sigma.apply(&r, false)?)?;
        if !lhs.sub(&rhs)?.is_zero() {
            return Ok(CheckReport {
                pass: false,
                witness: Some(r),
                detail: "sigma∘delta ≠ delta∘sigma at horizon".into(),
            });
        }
    }
    Ok(CheckReport {
        pass: true,
        witness: None,
        detail: "sigma∘delta = delta∘sigma on the spanning set at horizon".into(),
    })
}

// --- derived levels ---------------------------------------------------------

/// The level-n data of the subring tower: Σ_n = σ^{p^n},
/// T_n = (−1)^{p+1}·t^{p^n}, Δ_n = Inner(T_n) against Σ_n (which in char p
/// with σ(t) = t agrees with δ^{p^n}).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedLevel {
    pub n: u32,
    pub sigma_n: AutoSpec,
    pub t_n: Element,
    pub delta_n: DerivSpec,
    pub p: u64,
}

pub fn derive_level(d: &DerivSpec, n: u32) -> Result<DerivedLevel> {
    let ring = d.ring()?;
    let p = ring.prime();
    let pn = p
        .checked_pow(n)
        .ok_or_else(|| Error::OutOfRange(format!("p^{n} overflows")))?;
    let sigma_n = d.sigma.repeat(pn as u32);
    match &d.form {
        DerivForm::Inner { t } => {
            let tp = t.pow_i64(pn as i64)?;
            let t_n = if (p + 1) % 2 == 0 { tp } else { tp.neg() };
            let delta_n = DerivSpec::inner(t_n.clone(), sigma_n.clone());
            Ok(DerivedLevel {
                n,
                sigma_n,
                t_n,
                delta_n,
                p,
            })
        }
        DerivForm::BaseTwisted { .. } => {
            if ring.char_p().is_none() {
                return Err(Error::Shape(
                    "the delta^{p^n} level route needs characteristic p".into(),
                ));
            }
            // θ^{p^n} is again a base derivation (char p, commuting);
            // determine it by its value on π.
            let pi = Element::pi_pow(&base_laurent(&ring)?, 1)?;
            let theta_pn_pi = d.apply_n(&pi, pn as u32)?;
            let delta_n = DerivSpec {
                form: DerivForm::BaseTwisted {
                    theta_pi: theta_pn_pi,
                },
                sigma: sigma_n.clone(),
            };
            Ok(DerivedLevel {
                n,
                sigma_n,
                t_n: Element::zero(&ring),
                delta_n,
                p,
            })
        }
    }
}

fn base_laurent(ring: &RingSpec) -> Result<RingSpec> {
    match ring {
        RingSpec::TruncLaurent { .. } => Ok(ring.clone()),
        RingSpec::Matrix { base, .. } => base_laurent(base),
        RingSpec::Product { factors } => base_laurent(&factors[0]),
        RingSpec::Zmod { .. } => Err(Error::Shape("no Laurent base in Zmod".into())),
    }
}

/// In char p with σ(t) = t, assert the Inner(T_n) construction agrees with
/// the iterate δ^{p^n} on the spanning set.
pub fn verify_level_agreement(
    d: &DerivSpec,
    level: &DerivedLevel,
    span_lo: i64,
    span_hi: i64,
) -> Result<CheckReport> {
    let ring = d.ring()?;
    let pn = level.p.pow(level.n) as u32;
    for r in spanning_set(&ring, span_lo, span_hi) {
        let iterated = d.apply_n(&r, pn)?;
        let inner_form = level.delta_n.apply(&r)?;
        if !iterated.sub(&inner_form)?.is_zero() {
            return Ok(CheckReport {
                pass: false,
                witness: Some(r),
                detail: format!("delta^{pn} ≠ Inner(T_{}) against Sigma_{}", level.n, level.n),
            });
        }
    }
    Ok(CheckReport {
        pass: true,
        witness: None,
        detail: format!(
            "delta^{pn} = Inner(T_{}) against Sigma_{} on the spanning set",
            level.n, level.n
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffring::random_element;
    use crate::rng::SplitMix64;

    fn laurent(p: u64, relprec: u32) -> RingSpec {
        RingSpec::TruncLaurent {
            p,
            relprec,
            cap: 64,
        }
    }

    fn iwasawa_sigma(ring: &RingSpec) -> AutoSpec {
        let f = Element::from_laurent_digits(ring, 1, &[1, 1]).unwrap();
        AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        }
    }

    #[test]
    fn subst_on_pi() {
        let r = laurent(3, 3);
        let sigma = iwasawa_sigma(&r);
        let pi = Element::pi_pow(&r, 1).unwrap();
        let img = sigma.apply(&pi, false).unwrap();
        assert_eq!(img, Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap());
    }

    #[test]
    fn subst_inverse_is_series_reversion() {
        let r = laurent(3, 3);
        let sigma = iwasawa_sigma(&r);
        let pi = Element::pi_pow(&r, 1).unwrap();
        // Reversion of π + π² is π − π² + 2π³ − …; with three relative
        // digits the stored value is π + 2π² + 2π³ (−1 ≡ 2 in F_3), which
        // truncates to π − π² mod π³.
        let inv = sigma.apply(&pi, true).unwrap();
        assert_eq!(inv, Element::from_laurent_digits(&r, 1, &[1, 2, 2]).unwrap());
        let two_digit = Element::from_laurent_digits(&r, 1, &[1, 2]).unwrap();
        assert!(inv.sub(&two_digit).unwrap().filt().ge(3));
        // forward ∘ inverse fixes π up to the window.
        let round = sigma.apply(&inv, false).unwrap();
        let defect = round.sub(&pi).unwrap();
        assert!(defect.filt().ge(4));
    }

    #[test]
    fn subst_preserves_valuation_and_products() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let mut rng = SplitMix64::new(11);
        for _ in 0..50 {
            let x = random_element(&r, &mut rng);
            let y = random_element(&r, &mut rng);
            let lhs = sigma.apply(&x.mul(&y).unwrap(), false).unwrap();
            let rhs = sigma
                .apply(&x, false)
                .unwrap()
                .mul(&sigma.apply(&y, false).unwrap())
                .unwrap();
            assert!(lhs.sub(&rhs).unwrap().is_zero(), "not multiplicative");
            if let FiltValue::Finite(v) = x.filt() {
                assert_eq!(sigma.apply(&x, false).unwrap().filt(), FiltValue::Finite(v));
            }
        }
    }

    #[test]
    fn cycle_shift_rotates_factors() {
        let base = laurent(3, 4);
        let r = RingSpec::Product {
            factors: vec![base.clone(), base.clone()],
        };
        let a = Element::pi_pow(&base, 1).unwrap();
        let b = Element::pi_pow(&base, 2).unwrap();
        let x = Element::from_factors(&r, vec![a.clone(), b.clone()]).unwrap();
        let shift = AutoSpec {
            chain: vec![AutoPrimitive::CycleShift { k: 1 }],
        };
        let y = shift.apply(&x, false).unwrap();
        assert_eq!(y, Element::from_factors(&r, vec![b, a.clone()]).unwrap());
        // inverse undoes the rotation
        let z = shift.apply(&y, true).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn inner_delta_with_t_minus_one_is_sigma_minus_id() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::from_int(&r, -1), sigma.clone());
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let s = random_element(&r, &mut rng);
            let lhs = d.apply(&s).unwrap();
            let rhs = sigma.apply(&s, false).unwrap().sub(&s).unwrap();
            assert!(lhs.sub(&rhs).unwrap().is_zero());
        }
    }

    #[test]
    fn inner_delta_of_pi_is_small() {
        // δ(π) = π·π − (π+π²)·π = −π³ with Inner(π), σ = Subst(π+π²).
        let r = laurent(3, 3);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::pi_pow(&r, 1).unwrap(), sigma);
        let out = d.apply(&Element::pi_pow(&r, 1).unwrap()).unwrap();
        assert!(out.filt().ge(3));
        assert_eq!(out, Element::from_laurent_digits(&r, 3, &[2]).unwrap());
    }

    #[test]
    fn delta_of_one_vanishes() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let specs = [
            DerivSpec::inner(Element::pi_pow(&r, 1).unwrap(), sigma.clone()),
            DerivSpec {
                form: DerivForm::BaseTwisted {
                    theta_pi: Element::pi_pow(&r, 2).unwrap(),
                },
                sigma,
            },
        ];
        for d in &specs {
            assert!(d.apply(&Element::one(&r)).unwrap().is_zero());
        }
    }

    #[test]
    fn base_twisted_satisfies_leibniz() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec {
            form: DerivForm::BaseTwisted {
                theta_pi: Element::from_laurent_digits(&r, 2, &[1, 2]).unwrap(),
            },
            sigma: sigma.clone(),
        };
        let mut rng = SplitMix64::new(17);
        for _ in 0..50 {
            let x = random_element(&r, &mut rng);
            let y = random_element(&r, &mut rng);
            let lhs = d.apply(&x.mul(&y).unwrap()).unwrap();
            let rhs = d
                .apply(&x)
                .unwrap()
                .mul(&y)
                .unwrap()
                .add(&sigma.apply(&x, false).unwrap().mul(&d.apply(&y).unwrap()).unwrap())
                .unwrap();
            assert!(lhs.sub(&rhs).unwrap().is_zero(), "twisted Leibniz failed");
        }
    }

    #[test]
    fn closed_form_small_cases() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::from_int(&r, -1), sigma.clone());
        let mut rng = SplitMix64::new(23);
        let s = random_element(&r, &mut rng);
        // n = 1 is the base case; n = 2 reduces to (σ−id)² for t = −1.
        let n1 = delta_power_closed(&d, 1, &s).unwrap();
        assert!(n1.sub(&d.apply(&s).unwrap()).unwrap().is_zero());
        let n2 = delta_power_closed(&d, 2, &s).unwrap();
        let s1 = sigma.apply(&s, false).unwrap();
        let s2 = sigma.apply(&s1, false).unwrap();
        let expect = s.sub(&s1.scale_int(2)).unwrap().add(&s2).unwrap();
        assert!(n2.sub(&expect).unwrap().is_zero());
    }

    #[test]
    fn closed_form_char_p_collapse_t_pi() {
        // char 3, t = π (σ-fixed only if σ(π) = π): use the identity σ.
        let r = laurent(3, 6);
        let sigma = AutoSpec::identity();
        let d = DerivSpec::inner(Element::pi_pow(&r, 1).unwrap(), sigma.clone());
        let mut rng = SplitMix64::new(29);
        let s = random_element(&r, &mut rng);
        let lhs = delta_power_closed(&d, 3, &s).unwrap();
        let t3 = Element::pi_pow(&r, 3).unwrap();
        let rhs = t3
            .mul(&s)
            .unwrap()
            .sub(&sigma.apply_pow(&s, 3).unwrap().mul(&t3).unwrap())
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().is_zero());
    }

    #[test]
    fn certify_iwasawa_is_compatible() {
        let r = laurent(3, 8);
        let d = DerivSpec::inner(Element::from_int(&r, -1), iwasawa_sigma(&r));
        let cert = certify(&d, 8, CertWindow::default()).unwrap();
        assert_eq!(cert.mode, CertMode::Compatible);
        assert_eq!(cert.b, 0);
        assert_eq!(cert.n, Some(1));
        assert!(reverify_certificate(&d, &cert).unwrap());
    }

    #[test]
    fn certify_diag_conj_fails_with_witness() {
        let base = laurent(3, 8);
        let r = RingSpec::Matrix {
            size: 2,
            base: Box::new(base.clone()),
        };
        let a = Element::from_entries(
            &r,
            vec![
                Element::one(&base),
                Element::zero(&base),
                Element::zero(&base),
                Element::pi_pow(&base, 1).unwrap(),
            ],
        )
        .unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Conj { a }],
        };
        let t = Element::from_entries(
            &r,
            vec![
                Element::pi_pow(&base, 1).unwrap(),
                Element::zero(&base),
                Element::zero(&base),
                Element::pi_pow(&base, 1).unwrap(),
            ],
        )
        .unwrap();
        let d = DerivSpec::inner(t, sigma);
        let cert = certify(&d, 4, CertWindow::default()).unwrap();
        assert_eq!(cert.mode, CertMode::Failed);
        let fw = cert.failure_witness.as_ref().expect("failure witness");
        assert!(fw.observed_full < fw.observed_half);
        assert!(reverify_certificate(&d, &cert).unwrap());
    }

    #[test]
    fn certify_unipotent_conj_is_quasi() {
        let base = laurent(3, 8);
        let r = RingSpec::Matrix {
            size: 2,
            base: Box::new(base.clone()),
        };
        let a = Element::from_entries(
            &r,
            vec![
                Element::one(&base),
                Element::one(&base),
                Element::zero(&base),
                Element::one(&base),
            ],
        )
        .unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Conj { a }],
        };
        let t = Element::from_entries(
            &r,
            vec![
                Element::pi_pow(&base, 1).unwrap(),
                Element::zero(&base),
                Element::zero(&base),
                Element::pi_pow(&base, 1).unwrap(),
            ],
        )
        .unwrap();
        let d = DerivSpec::inner(t, sigma);
        let cert = certify(&d, 4, CertWindow::default()).unwrap();
        assert_eq!(cert.mode, CertMode::Quasi);
        assert_eq!(cert.b, 0);
        assert!(cert.n.is_some());
    }

    #[test]
    fn commuting_holds_when_sigma_fixes_t() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::from_int(&r, -1), sigma);
        let report = check_commuting(&d, 6, -4).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn commuting_fails_for_moved_t_with_inner_sigma() {
        let base = laurent(3, 6);
        let r = RingSpec::Matrix {
            size: 2,
            base: Box::new(base.clone()),
        };
        // σ = Conj(diag(1,π)) does not fix t = e12, and σδ ≠ δσ.
        let a = Element::from_entries(
            &r,
            vec![
                Element::one(&base),
                Element::zero(&base),
                Element::zero(&base),
                Element::pi_pow(&base, 1).unwrap(),
            ],
        )
        .unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Conj { a }],
        };
        let t = Element::from_entries(
            &r,
            vec![
                Element::zero(&base),
                Element::one(&base),
                Element::zero(&base),
                Element::zero(&base),
            ],
        )
        .unwrap();
        let d = DerivSpec::inner(t, sigma);
        let report = check_commuting(&d, 3, -2).unwrap();
        assert!(!report.pass);
        assert!(report.witness.is_some());
    }

    #[test]
    fn derive_level_zero_is_input() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let t = Element::from_int(&r, -1);
        let d = DerivSpec::inner(t.clone(), sigma.clone());
        let lvl = derive_level(&d, 0).unwrap();
        // T_0 = (−1)^{p+1}·t = t for odd p.
        assert_eq!(lvl.t_n, t);
        assert_eq!(lvl.sigma_n.chain.len(), sigma.chain.len());
    }

    #[test]
    fn derive_level_iwasawa_char3() {
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::from_int(&r, -1), sigma);
        let lvl = derive_level(&d, 1).unwrap();
        // T₁ = (−1)⁴·(−1)³ = −1 and Σ₁ = σ³.
        assert_eq!(lvl.t_n, Element::from_int(&r, -1));
        assert_eq!(lvl.sigma_n.chain.len(), 3);
        let agree = verify_level_agreement(&d, &lvl, -3, 3).unwrap();
        assert!(agree.pass, "{}", agree.detail);
    }

    #[test]
    fn level_shift_relation() {
        // derive_level at 1 then 1 more equals derive_level at 2:
        // Σ_{i+n} = Σ_i^{p^n} and T_{i+n} = (−1)^{p+1}·T_i^{p^n}.
        let r = laurent(3, 6);
        let sigma = iwasawa_sigma(&r);
        let d = DerivSpec::inner(Element::pi_pow(&r, 0).unwrap().neg(), sigma);
        let lvl1 = derive_level(&d, 1).unwrap();
        let lvl2_direct = derive_level(&d, 2).unwrap();
        let lvl2_shift = derive_level(&lvl1.delta_n, 1).unwrap();
        assert_eq!(lvl2_shift.t_n, lvl2_direct.t_n);
        // The two Σ₂ chains are different spellings of the same map.
        let probe = Element::pi_pow(&r, 1).unwrap();
        let a = lvl2_direct.sigma_n.apply(&probe, false).unwrap();
        let b = lvl2_shift.sigma_n.apply(&probe, false).unwrap();
        assert!(a.sub(&b).unwrap().is_zero());
    }
}
