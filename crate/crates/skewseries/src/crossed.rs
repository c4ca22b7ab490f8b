//! Crossed-product structure at the normal element g = x − t: rewriting on
//! the g-basis with g·s = σ(s)·g and g^{p^m} = X_m − T_m, the length-reduction
//! closure engine, and the principal-ideal reduction in the twisted
//! polynomial ring Q[y; τ].

use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::coeffring::{spanning_set, Element, RingSpec};
use crate::error::{Error, Result};
use crate::series::{eval_x, poly_mul, poly_pow, BoundedSeries, CertifiedDeriv, SkewPoly};
use crate::skewmaps::{derive_level, AutoSpec, CheckReport, DerivForm, DerivSpec, DerivedLevel};
use crate::rebase::{Basis, Decomposition, Rebaser};
use serde::{Deserialize, Serialize};

// --- level-subring coefficient arithmetic -----------------------------------

/// Apply the base automorphism σ^pow coefficientwise to an element of the
/// level subring (valid because σ(t) = t forces σ(X_m) = X_m).
fn sigma_on_part(base: &DerivSpec, part: &SkewPoly, pow: i64) -> Result<SkewPoly> {
    let mut out = Vec::with_capacity(part.coeffs.len());
    for c in &part.coeffs {
        out.push(base.sigma.apply_pow(c, pow)?);
    }
    Ok(SkewPoly::new(out, part.deriv.clone()))
}

fn truncate_part(part: &SkewPoly, q: usize) -> SkewPoly {
    let coeffs: Vec<Element> = part.coeffs.iter().take(q + 1).cloned().collect();
    SkewPoly::new(coeffs, part.deriv.clone())
}

/// Whether a polynomial over the level subring is indistinguishable from
/// zero below the horizon: every coefficient has certified filtration ≥ h.
fn below_horizon(p: &SkewPoly, h: i64) -> bool {
    p.coeffs.iter().all(|c| c.filt().ge(h))
}

/// Inverse of a unit of the level subring, truncated at X-order `q` and
/// certified at the horizon: z = a₀·(1 + w) with a₀ a unit of the
/// coefficient ring and w of positive X-order, so z^{-1} = (Σ (−w)^j)·a₀^{-1}.
/// The sum does not terminate in X-degree (δ pushes high powers back down),
/// but its low-order window stabilizes because each push-down gains
/// filtration; the loop runs until the window stops changing and the result
/// is accepted only if both residuals z·u − 1 and u·z − 1 vanish below the
/// horizon on orders ≤ q.
pub fn subring_inverse(z: &SkewPoly, q: usize, horizon: i64) -> Result<SkewPoly> {
    let d = &z.deriv;
    let a0 = z.coeff(0)?;
    let a0_inv = a0.invert()?;
    // Fast exact path: a constant of the subring inverts in the base ring.
    if z.degree().unwrap_or(0) == 0 {
        return Ok(SkewPoly::constant(a0_inv, d));
    }
    let normalized = z.scale_left(&a0_inv)?;
    let w = normalized.sub(&SkewPoly::one(d)?)?;
    if !w.coeff(0)?.filt().ge(horizon) {
        return Err(Error::NotAUnit(
            "constant term of the subring element".into(),
        ));
    }
    let neg_w = w.neg();
    // Working degree cap: dropped orders above it reach the window ≤ q only
    // through that many δ push-downs, each gaining filtration, so they sit
    // beyond any horizon this artifact certifies at.
    let work = q + 64;
    let mut acc = SkewPoly::one(d)?;
    let mut pow = SkewPoly::one(d)?;
    let mut stable = 0;
    for _ in 0..256 {
        pow = truncate_part(&poly_mul(&pow, &neg_w)?, work);
        if pow.is_zero() {
            break;
        }
        let before = truncate_part(&acc, q);
        acc = acc.add(&pow)?;
        if truncate_part(&acc, q).sub(&before)?.is_zero() {
            stable += 1;
            if stable >= 2 {
                break;
            }
        } else {
            stable = 0;
        }
    }
    let u = truncate_part(&poly_mul(&acc, &SkewPoly::constant(a0_inv, d))?, q);
    let one = SkewPoly::one(d)?;
    let right = truncate_part(&poly_mul(z, &u)?, q).sub(&one)?;
    let left = truncate_part(&poly_mul(&u, z)?, q).sub(&one)?;
    if !below_horizon(&right, horizon) || !below_horizon(&left, horizon) {
        return Err(Error::PrecisionInsufficient(format!(
            "subring inverse did not certify at horizon {horizon}"
        )));
    }
    Ok(u)
}

// --- crossed elements -------------------------------------------------------

/// Σ_i s_i·g^i with g = x − t and s_i in the level-m subring (polynomials in
/// X_m over (Σ_m, Δ_m)); normalized support lies in [0, p^m − 1] after
/// folding with g^{p^m} = X_m − T_m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossedElement {
    pub support: BTreeMap<i64, SkewPoly>,
    pub level: DerivedLevel,
    pub base: DerivSpec,
}

impl PartialEq for CrossedElement {
    fn eq(&self, other: &Self) -> bool {
        self.level.n == other.level.n && self.support == other.support
    }
}

impl CrossedElement {
    pub fn zero(level: &DerivedLevel, base: &DerivSpec) -> CrossedElement {
        CrossedElement {
            support: BTreeMap::new(),
            level: level.clone(),
            base: base.clone(),
        }
    }

    fn pm(&self) -> i64 {
        (self.level.p.pow(self.level.n)) as i64
    }

    /// g^{p^m} = X_m − T_m as an element of the level subring.
    pub fn g_power_pm(&self) -> Result<SkewPoly> {
        let d_m = &self.level.delta_n;
        let ring = self.base.ring()?;
        Ok(SkewPoly::new(
            vec![self.level.t_n.neg(), Element::one(&ring)],
            d_m.clone(),
        ))
    }

    pub fn insert(&mut self, i: i64, part: SkewPoly) {
        if part.is_zero() {
            self.support.remove(&i);
        } else {
            self.support.insert(i, part);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.support.values().all(|p| p.is_zero())
    }

    pub fn is_normalized(&self) -> bool {
        self.support
            .keys()
            .all(|&i| i >= 0 && i < self.pm())
    }

    /// Fold all exponents into [0, p^m − 1]. Downward folding
    /// (s·g^{i+p^m} = (s·c)·g^i with c = X_m − T_m) is exact; upward folding
    /// multiplies by the truncated inverse of c and needs the unit instance
    /// (t a unit at filtration 0), with parts truncated at X-order `q`.
    pub fn normalize(&self, q: usize, horizon: i64) -> Result<CrossedElement> {
        let pm = self.pm();
        let c = self.g_power_pm()?;
        let mut out = CrossedElement::zero(&self.level, &self.base);
        for (&i, part) in &self.support {
            let mut i = i;
            let mut part = part.clone();
            while i >= pm {
                part = poly_mul(&part, &c)?;
                i -= pm;
            }
            if i < 0 {
                let t0 = match &self.base.form {
                    DerivForm::Inner { t } => t.clone(),
                    _ => {
                        return Err(Error::Shape(
                            "crossed elements need the Inner form".into(),
                        ))
                    }
                };
                if t0.invert().is_err()
                    || t0.filt().lower_bound() != 0
                {
                    return Err(Error::NotAUnit("t must be a unit at filtration 0 for negative g-exponents".into()));
                }
                let c_inv = subring_inverse(&c, q, horizon)?;
                while i < 0 {
                    part = truncate_part(&poly_mul(&part, &c_inv)?, q);
                    i += pm;
                }
            }
            let merged = match out.support.get(&i) {
                Some(existing) => existing.add(&part)?,
                None => part,
            };
            out.insert(i, merged);
        }
        Ok(out)
    }

    pub fn add(&self, other: &CrossedElement) -> Result<CrossedElement> {
        let mut out = self.clone();
        for (&i, part) in &other.support {
            let merged = match out.support.get(&i) {
                Some(existing) => existing.add(part)?,
                None => part.clone(),
            };
            out.insert(i, merged);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &CrossedElement) -> Result<CrossedElement> {
        let mut neg = other.clone();
        let parts: Vec<(i64, SkewPoly)> = neg
            .support
            .iter()
            .map(|(&i, p)| (i, p.neg()))
            .collect();
        neg.support = parts.into_iter().collect();
        self.add(&neg)
    }

    /// s·Z for s in the level subring (coefficientwise left product).
    pub fn scale_left(&self, s: &SkewPoly) -> Result<CrossedElement> {
        let mut out = CrossedElement::zero(&self.level, &self.base);
        for (&i, part) in &self.support {
            out.insert(i, poly_mul(s, part)?);
        }
        Ok(out)
    }

    /// Z·s = Σ z_i·σ^i(s)·g^i.
    pub fn scale_right(&self, s: &SkewPoly) -> Result<CrossedElement> {
        let mut out = CrossedElement::zero(&self.level, &self.base);
        for (&i, part) in &self.support {
            let twisted = sigma_on_part(&self.base, s, i)?;
            out.insert(i, poly_mul(part, &twisted)?);
        }
        Ok(out)
    }

    /// g·Z = Σ σ(z_i)·g^{i+1}, folded back into the normalized window.
    pub fn mul_g_left(&self) -> Result<CrossedElement> {
        let mut out = CrossedElement::zero(&self.level, &self.base);
        for (&i, part) in &self.support {
            out.insert(i + 1, sigma_on_part(&self.base, part, 1)?);
        }
        out.normalize(usize::MAX / 2, 0)
    }

    /// Z·g = Σ z_i·g^{i+1}, folded.
    pub fn mul_g_right(&self) -> Result<CrossedElement> {
        let mut out = CrossedElement::zero(&self.level, &self.base);
        for (&i, part) in &self.support {
            out.insert(i + 1, part.clone());
        }
        out.normalize(usize::MAX / 2, 0)
    }

    /// The number of nonzero g-coefficients; zero iff the element is zero.
    pub fn length(&self) -> usize {
        self.support.values().filter(|p| !p.is_zero()).count()
    }

    pub fn top_exponent(&self) -> Option<i64> {
        self.support
            .iter()
            .filter(|(_, p)| !p.is_zero())
            .map(|(&i, _)| i)
            .max()
    }
}

/// Rebase a bounded series onto the g-power basis at level m via the monic
/// change of basis; the support indices are the (x−t)-exponents 0..p^m−1.
pub fn to_crossed(f: &BoundedSeries, m: u32) -> Result<CrossedElement> {
    let level = derive_level(&f.deriv.spec, m)?;
    let pm = level.p.pow(m) as usize;
    let q = f.k_order() / pm;
    let reb = Rebaser::new(&f.deriv, m, Basis::XMinusTPowers, q)?;
    let dec = reb.decompose(f)?;
    let mut out = CrossedElement::zero(&level, &f.deriv.spec);
    for (l, part) in dec.parts.iter().enumerate() {
        out.insert(l as i64, SkewPoly::new(part.clone(), level.delta_n.clone()));
    }
    Ok(out)
}

/// Inverse of `to_crossed`: expand the g-basis representation back into a
/// bounded series in x.
pub fn flatten(r: &CrossedElement, deriv: &CertifiedDeriv) -> Result<BoundedSeries> {
    if !r.is_normalized() {
        return Err(Error::Shape("flatten needs a normalized support".into()));
    }
    let pm = r.pm() as usize;
    let q = r
        .support
        .values()
        .map(|p| p.coeffs.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let ring = deriv.spec.ring()?;
    let mut parts = vec![vec![Element::zero(&ring); q + 1]; pm];
    for (&i, part) in &r.support {
        for (k, c) in part.coeffs.iter().enumerate() {
            parts[i as usize][k] = c.clone();
        }
    }
    let dec = Decomposition {
        parts,
        level: r.level.n,
        basis: Basis::XMinusTPowers,
        guarantee: ring.cap(),
        tail_exact: true,
        deriv: deriv.clone(),
    };
    Rebaser::new(deriv, r.level.n, Basis::XMinusTPowers, q)?.recompose(&dec)
}

// --- the crossed-product relations ------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossedReport {
    pub pass: bool,
    pub checks: Vec<CheckReport>,
}

/// Verify, with exact polynomial arithmetic, the three relations that make
/// the localized ring a crossed product by Z/p^mZ: conjugation by g acts as
/// σ, g^{p^m} = X_m − T_m, and the twisting wraparound
/// g^a·g^b = (X_m − T_m)·g^{a+b−p^m} for a + b ≥ p^m (trivial twisting 1
/// below the wraparound).
pub fn crossed_relations(
    d: &DerivSpec,
    m: u32,
    span_lo: i64,
    span_hi: i64,
) -> Result<CrossedReport> {
    let ring = d.ring()?;
    let t = match &d.form {
        DerivForm::Inner { t } => t.clone(),
        _ => return Err(Error::Shape("crossed relations need the Inner form".into())),
    };
    let t_inv = t
        .invert()
        .map_err(|_| Error::HypothesisFailure("t is not a unit".into()))?;
    if t.filt().lower_bound() != 0 || t_inv.filt().lower_bound() != 0 {
        return Err(Error::HypothesisFailure(
            "g = x − t is a unit only when filt(t) = filt(t^{-1}) = 0".into(),
        ));
    }
    if !d.sigma_fixes_t()? {
        return Err(Error::HypothesisFailure("σ(t) ≠ t at horizon".into()));
    }
    let mut checks = Vec::new();
    let g = SkewPoly::x_minus_t(d)?;
    // Conjugation: g·s = σ(s)·g for every spanning element (equivalent to
    // g·s·g^{-1} = σ(s) since g is a unit after localization).
    let mut conj_pass = true;
    let mut conj_witness = None;
    for s in spanning_set(&ring, span_lo, span_hi) {
        let lhs = poly_mul(&g, &SkewPoly::constant(s.clone(), d))?;
        let sig = d.sigma.apply(&s, false)?;
        let rhs = poly_mul(&SkewPoly::constant(sig, d), &g)?;
        if !lhs.sub(&rhs)?.is_zero() {
            conj_pass = false;
            conj_witness = Some(s);
            break;
        }
    }
    checks.push(CheckReport {
        pass: conj_pass,
        witness: conj_witness,
        detail: "conjugation by g acts as σ on the spanning set".into(),
    });
    // g^{p^m} = X_m − T_m exactly at truncation.
    let level = derive_level(d, m)?;
    let pm = level.p.pow(m) as u32;
    let gp = poly_pow(&g, pm)?;
    let x_m = eval_x(&level, d)?;
    let c = x_m.sub(&SkewPoly::constant(level.t_n.clone(), d))?;
    let pow_pass = gp.sub(&c)?.is_zero();
    checks.push(CheckReport {
        pass: pow_pass,
        witness: None,
        detail: format!("g^{pm} = X_{m} − T_{m} exactly"),
    });
    // Twisting map: trivial below wraparound, X_m − T_m above it.
    let mut twist_pass = true;
    let mut twist_detail = String::from("twisting map: 1 below wraparound, X−T above");
    'outer: for a in 0..pm {
        for b in 0..pm {
            let lhs = poly_mul(&poly_pow(&g, a)?, &poly_pow(&g, b)?)?;
            let rhs = if a + b >= pm {
                poly_mul(&c, &poly_pow(&g, a + b - pm)?)?
            } else {
                poly_pow(&g, a + b)?
            };
            if !lhs.sub(&rhs)?.is_zero() {
                twist_pass = false;
                twist_detail = format!("twisting mismatch at (a, b) = ({a}, {b})");
                break 'outer;
            }
        }
    }
    checks.push(CheckReport {
        pass: twist_pass,
        witness: None,
        detail: twist_detail,
    });
    Ok(CrossedReport {
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

// --- the length-reduction engine --------------------------------------------

/// A stored derivation of a frontier element as an explicit two-sided
/// combination of the generators; replaying it must reproduce the element
/// exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "move", rename_all = "snake_case")]
pub enum Combination {
    Generator { index: usize },
    /// g·Z − Z·g.
    GCommutator { inner: Box<Combination> },
    /// s·Z − Z·σ^{-k}(s) with k the top exponent of Z.
    SCommutator {
        s: Element,
        k: i64,
        inner: Box<Combination>,
    },
    /// z_k^{-1}·Z where z_k, the top coefficient of Z, is a unit.
    UnitScale { k: i64, inner: Box<Combination> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub elem: CrossedElement,
    pub combination: Combination,
    pub depth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffClass {
    pub exponent: i64,
    pub sigma_invariant_at_horizon: bool,
    pub unit: bool,
    /// True when the coefficient z is a unit and z^{-1}·s·z = σ^{i−k}(s)
    /// held for every spanning element.
    pub normal_witness: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ReductionOptions {
    pub max_depth: usize,
    pub max_elements: usize,
    pub span_lo: i64,
    pub span_hi: i64,
    /// X-order at which subring inverses are truncated.
    pub part_order: usize,
    /// Filtration level at which "unit" and "σ-invariant" predicates are
    /// decided (they are horizon predicates, not exact ones).
    pub horizon: i64,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions {
            max_depth: 5,
            max_elements: 10_000,
            span_lo: -4,
            span_hi: 4,
            part_order: 4,
            horizon: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionState {
    pub generators: Vec<CrossedElement>,
    pub frontier: Vec<FrontierEntry>,
    pub min_length_witness: Option<FrontierEntry>,
    pub classifications: Vec<CoeffClass>,
    pub budget_used: usize,
    pub budget_exhausted: bool,
}

impl ReductionState {
    pub fn new(generators: Vec<CrossedElement>) -> ReductionState {
        ReductionState {
            generators,
            frontier: Vec::new(),
            min_length_witness: None,
            classifications: Vec::new(),
            budget_used: 0,
            budget_exhausted: false,
        }
    }
}

fn dedupe_key(e: &CrossedElement) -> String {
    serde_json::to_string(&e.support).unwrap_or_default()
}

/// Replay a combination against the generator list (the re-evaluation oracle
/// for the stored-combination invariant).
pub fn replay_combination(
    comb: &Combination,
    generators: &[CrossedElement],
    opts: &ReductionOptions,
) -> Result<CrossedElement> {
    match comb {
        Combination::Generator { index } => generators
            .get(*index)
            .cloned()
            .ok_or_else(|| Error::Shape("generator index out of range".into())),
        Combination::GCommutator { inner } => {
            let z = replay_combination(inner, generators, opts)?;
            z.mul_g_left()?.sub(&z.mul_g_right()?)
        }
        Combination::SCommutator { s, k, inner } => {
            let z = replay_combination(inner, generators, opts)?;
            let s_poly = SkewPoly::constant(s.clone(), &z.level.delta_n);
            let twisted =
                SkewPoly::constant(z.base.sigma.apply_pow(s, -k)?, &z.level.delta_n);
            z.scale_left(&s_poly)?.sub(&z.scale_right(&twisted)?)
        }
        Combination::UnitScale { k, inner } => {
            let z = replay_combination(inner, generators, opts)?;
            let top = z
                .support
                .get(k)
                .ok_or_else(|| Error::Shape("unit-scale exponent not in support".into()))?;
            let inv = subring_inverse(top, opts.part_order, opts.horizon)?;
            z.scale_left(&inv)
        }
    }
}

fn children_of(
    entry: &FrontierEntry,
    opts: &ReductionOptions,
    ring: &RingSpec,
) -> Result<Vec<(CrossedElement, Combination)>> {
    let z = &entry.elem;
    let mut out = Vec::new();
    if z.is_zero() {
        return Ok(out);
    }
    // Move 1: gZ − Zg kills non-σ-invariant coefficients.
    let gz = z.mul_g_left()?.sub(&z.mul_g_right()?)?;
    out.push((
        gz,
        Combination::GCommutator {
            inner: Box::new(entry.combination.clone()),
        },
    ));
    let k = z.top_exponent().unwrap_or(0);
    // Move 2: sZ − Zσ^{-k}(s) forces the normality relations.
    for s in spanning_set(ring, opts.span_lo, opts.span_hi) {
        let s_poly = SkewPoly::constant(s.clone(), &z.level.delta_n);
        let twisted =
            SkewPoly::constant(z.base.sigma.apply_pow(&s, -k)?, &z.level.delta_n);
        let cand = z.scale_left(&s_poly)?.sub(&z.scale_right(&twisted)?)?;
        out.push((
            cand,
            Combination::SCommutator {
                s,
                k,
                inner: Box::new(entry.combination.clone()),
            },
        ));
    }
    // Move 3: monicize by the inverse of a unit top coefficient.
    if let Some(top) = z.support.get(&k) {
        if let Ok(inv) = subring_inverse(top, opts.part_order, opts.horizon) {
            out.push((
                z.scale_left(&inv)?,
                Combination::UnitScale {
                    k,
                    inner: Box::new(entry.combination.clone()),
                },
            ));
        }
    }
    Ok(out)
}

/// Close the generator set under the proof moves (breadth-first by
/// derivation depth, ties by construction order), tracking the minimal
/// positive-length element found, its stored combination, and the
/// per-coefficient classification of the witness.
pub fn reduce_length(
    mut state: ReductionState,
    opts: ReductionOptions,
) -> Result<ReductionState> {
    if state.generators.is_empty() {
        return Err(Error::Shape("no generators".into()));
    }
    let base = state.generators[0].base.clone();
    let ring = base.ring()?;
    let mut seen: HashSet<String> = HashSet::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    state.frontier.clear();
    for (i, g) in state.generators.iter().enumerate() {
        let g = g.normalize(opts.part_order, opts.horizon)?;
        let entry = FrontierEntry {
            elem: g.clone(),
            combination: Combination::Generator { index: i },
            depth: 0,
        };
        if seen.insert(dedupe_key(&g)) && !g.is_zero() {
            queue.push_back(state.frontier.len());
            state.frontier.push(entry);
        }
    }
    while let Some(ix) = queue.pop_front() {
        let entry = state.frontier[ix].clone();
        if entry.depth >= opts.max_depth {
            continue;
        }
        for (child, comb) in children_of(&entry, &opts, &ring)? {
            if state.budget_used >= opts.max_elements {
                state.budget_exhausted = true;
                queue.clear();
                break;
            }
            state.budget_used += 1;
            let child = child.normalize(opts.part_order, opts.horizon)?;
            if child.is_zero() || !seen.insert(dedupe_key(&child)) {
                continue;
            }
            let child_entry = FrontierEntry {
                elem: child,
                combination: comb,
                depth: entry.depth + 1,
            };
            queue.push_back(state.frontier.len());
            state.frontier.push(child_entry);
        }
    }
    // Minimal positive length, ties broken by construction order.
    let mut best: Option<usize> = None;
    for (i, e) in state.frontier.iter().enumerate() {
        let l = e.elem.length();
        if l == 0 {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if l < state.frontier[b].elem.length() => best = Some(i),
            _ => {}
        }
    }
    state.min_length_witness = best.map(|i| state.frontier[i].clone());
    state.classifications.clear();
    if let Some(w) = &state.min_length_witness {
        let k = w.elem.top_exponent().unwrap_or(0);
        let span = spanning_set(&ring, opts.span_lo, opts.span_hi);
        for (&i, z) in &w.elem.support {
            if z.is_zero() {
                continue;
            }
            let sig_z = sigma_on_part(&base, z, 1)?;
            let sigma_invariant = sig_z.sub(z)?.is_zero();
            let inv = subring_inverse(z, opts.part_order, opts.horizon);
            let unit = inv.is_ok();
            let mut normal_witness = false;
            if let Ok(z_inv) = inv {
                normal_witness = true;
                for s in &span {
                    let s_poly = SkewPoly::constant(s.clone(), &z.deriv);
                    let lhs = truncate_part(
                        &poly_mul(&poly_mul(&z_inv, &s_poly)?, z)?,
                        opts.part_order,
                    );
                    let rhs =
                        SkewPoly::constant(base.sigma.apply_pow(s, i - k)?, &z.deriv);
                    if !below_horizon(&lhs.sub(&rhs)?, opts.horizon) {
                        normal_witness = false;
                        break;
                    }
                }
            }
            state.classifications.push(CoeffClass {
                exponent: i,
                sigma_invariant_at_horizon: sigma_invariant,
                unit,
                normal_witness,
            });
        }
    }
    Ok(state)
}

// --- principal-ideal reduction in Q[y; τ] -----------------------------------

/// A replayable derivation of the final monic y-power from the input
/// polynomial: every step is a left/right multiplication or a commutator, so
/// the result stays in the two-sided ideal generated by the input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum YComb {
    Input,
    /// q·r − r·τ^{-n}(q) with n = deg r.
    Commutator { q: Element, n: u32, inner: Box<YComb> },
    /// u·r with u the inverse of the (unit) leading coefficient.
    LeftUnit { u: Element, inner: Box<YComb> },
    /// Σ_m (c^{-1}·E_{m,i})·r·τ^{-n}(E_{j,m}) — monicization through a unit
    /// entry (i, j) of the leading matrix coefficient.
    MatrixMonicize {
        i: usize,
        j: usize,
        c_inv: Element,
        n: u32,
        inner: Box<YComb>,
    },
    /// Σ_t scalar·(q_l·y^{b_l})·r·(q_r·y^{b_r}) — a general two-sided
    /// combination. Iterated commutators multiply the surviving coefficient
    /// by factors q − τ^j(q), each ≡ 0 mod π, so a long descent can exhaust
    /// the relative-precision window; a single round of monomial multiples
    /// loses no relative digits and certifies where the chain cannot.
    Combination {
        terms: Vec<YTerm>,
        inner: Box<YComb>,
    },
}

/// One monomial term scalar·(q_l·y^{b_l})·r·(q_r·y^{b_r}) of a two-sided
/// combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YTerm {
    pub scalar: i64,
    pub left_q: Element,
    pub left_y: u32,
    pub right_q: Element,
    pub right_y: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YCertificate {
    pub n: u32,
    pub combination: YComb,
    pub steps: usize,
}

/// The twisted polynomial ring Q[y; τ] is the skew polynomial ring with the
/// zero derivation: y·q = τ(q)·y.
pub fn y_deriv(ring: &RingSpec, tau: &AutoSpec) -> DerivSpec {
    DerivSpec::inner(Element::zero(ring), tau.clone())
}

fn y_power(d: &DerivSpec, n: usize) -> Result<SkewPoly> {
    let ring = d.ring()?;
    let mut coeffs = vec![Element::zero(&ring); n + 1];
    coeffs[n] = Element::one(&ring);
    Ok(SkewPoly::new(coeffs, d.clone()))
}

/// Replay a `YComb` from the input polynomial (the certificate oracle).
pub fn replay_y_combination(comb: &YComb, f: &SkewPoly) -> Result<SkewPoly> {
    let d = &f.deriv;
    match comb {
        YComb::Input => Ok(f.clone()),
        YComb::Commutator { q, n, inner } => {
            let r = replay_y_combination(inner, f)?;
            let q_poly = SkewPoly::constant(q.clone(), d);
            let tq = SkewPoly::constant(d.sigma.apply_pow(q, -(*n as i64))?, d);
            poly_mul(&q_poly, &r)?.sub(&poly_mul(&r, &tq)?)
        }
        YComb::LeftUnit { u, inner } => {
            let r = replay_y_combination(inner, f)?;
            r.scale_left(u)
        }
        YComb::MatrixMonicize {
            i,
            j,
            c_inv,
            n,
            inner,
        } => {
            let r = replay_y_combination(inner, f)?;
            let ring = d.ring()?;
            let size = match &ring {
                RingSpec::Matrix { size, .. } => *size,
                _ => return Err(Error::Shape("matrix monicization off a matrix ring".into())),
            };
            let mut acc = SkewPoly::zero(d);
            for m in 0..size {
                let left = matrix_unit(&ring, m, *i)?.mul(c_inv)?;
                let e_jm = matrix_unit(&ring, *j, m)?;
                let right = d.sigma.apply_pow(&e_jm, -(*n as i64))?;
                let term = poly_mul(
                    &SkewPoly::constant(left, d),
                    &poly_mul(&r, &SkewPoly::constant(right, d))?,
                )?;
                acc = acc.add(&term)?;
            }
            Ok(acc)
        }
        YComb::Combination { terms, inner } => {
            let r = replay_y_combination(inner, f)?;
            let ring = d.ring()?;
            let mut acc = SkewPoly::zero(d);
            for t in terms {
                let scaled = t.left_q.mul(&Element::from_int(&ring, t.scalar))?;
                let left = poly_mul(
                    &SkewPoly::constant(scaled, d),
                    &y_power(d, t.left_y as usize)?,
                )?;
                let right = poly_mul(
                    &SkewPoly::constant(t.right_q.clone(), d),
                    &y_power(d, t.right_y as usize)?,
                )?;
                let term = poly_mul(&poly_mul(&left, &r)?, &right)?;
                acc = acc.add(&term)?;
            }
            Ok(acc)
        }
    }
}

fn matrix_unit(ring: &RingSpec, i: usize, j: usize) -> Result<Element> {
    match ring {
        RingSpec::Matrix { size, base } => {
            let mut entries = vec![Element::zero(base); size * size];
            entries[i * size + j] = Element::one(base);
            Element::from_entries(ring, entries)
        }
        _ => Err(Error::Shape("matrix unit needs a matrix ring".into())),
    }
}

fn monicize_y(r: &SkewPoly, comb: YComb) -> Result<(SkewPoly, YComb)> {
    let d = &r.deriv;
    let n = r
        .degree()
        .ok_or_else(|| Error::Shape("cannot monicize zero".into()))? as u32;
    let lead = r.coeff(n as usize)?;
    if let Ok(u) = lead.invert() {
        let out = r.scale_left(&u)?;
        return Ok((out, YComb::LeftUnit {
            u,
            inner: Box::new(comb),
        }));
    }
    let ring = d.ring()?;
    if let RingSpec::Matrix { size, .. } = &ring {
        for i in 0..*size {
            for j in 0..*size {
                let c = lead.entry(i, j).cloned().ok_or_else(|| {
                    Error::Shape("matrix entry access failed".into())
                })?;
                if let Ok(c_inv) = c.invert() {
                    let one_step = YComb::MatrixMonicize {
                        i,
                        j,
                        c_inv: c_inv.clone(),
                        n,
                        inner: Box::new(YComb::Input),
                    };
                    let out = replay_y_combination(&one_step, r)?;
                    let step = YComb::MatrixMonicize {
                        i,
                        j,
                        c_inv,
                        n,
                        inner: Box::new(comb),
                    };
                    return Ok((out, step));
                }
            }
        }
    }
    Err(Error::HypothesisFailure(
        "leading coefficient is provably normal and non-unit at horizon".into(),
    ))
}

/// Constructive reduction of the two-sided ideal (f) in Q[y; τ] to its monic
/// y-power generator: returns the least n found with y^n expressed as an
/// explicit two-sided combination of f, plus the replayable certificate.
pub fn ideal_reduce_y(
    ring: &RingSpec,
    tau: &AutoSpec,
    f: &SkewPoly,
    span_lo: i64,
    span_hi: i64,
    budget: usize,
) -> Result<(u32, YCertificate)> {
    if f.is_zero() {
        return Err(Error::Shape("the zero polynomial generates the zero ideal".into()));
    }
    let d = y_deriv(ring, tau);
    if f.deriv != d {
        return Err(Error::DerivMismatch("input is not over Q[y; τ]".into()));
    }
    let span = spanning_set(ring, span_lo, span_hi);
    // The least y-exponent with a certified-nonzero coefficient: over the
    // simple instances the two-sided ideal (f) is exactly (y^m0), so a result
    // above it means the descent lost the witness to precision, not that the
    // ideal is smaller.
    let deg_f = f.degree().unwrap_or(0);
    let m0 = (0..=deg_f)
        .find(|&i| f.coeff(i).map(|c| !c.is_zero()).unwrap_or(false))
        .unwrap_or(deg_f);
    let descent = commutator_descent(&d, &span, f, budget);
    match descent {
        Ok((n, cert)) if (n as usize) <= m0 => Ok((n, cert)),
        other => match span_combination(ring, &d, f, m0, span_lo, span_hi) {
            Ok(combination) => Ok((
                m0 as u32,
                YCertificate {
                    n: m0 as u32,
                    combination,
                    steps: 1,
                },
            )),
            Err(_) => other,
        },
    }
}

/// The q-commutator descent: monicize, then replace r by q·r − r·τ^{-n}(q)
/// for a spanning q, which strictly lowers the degree. Every factor
/// q − τ^j(q) is divisible by π, so each step costs relative precision; the
/// caller falls back to a one-round two-sided combination when the descent
/// bottoms out above the least nonzero exponent.
fn commutator_descent(
    d: &DerivSpec,
    span: &[Element],
    f: &SkewPoly,
    budget: usize,
) -> Result<(u32, YCertificate)> {
    let mut r = f.clone();
    let mut comb = YComb::Input;
    let mut steps = 0usize;
    loop {
        if steps >= budget {
            return Err(Error::BudgetExhausted(format!("ideal reduction stopped after {steps} steps")));
        }
        steps += 1;
        let (monic, monic_comb) = monicize_y(&r, comb)?;
        r = monic;
        comb = monic_comb;
        let n = r.degree().unwrap_or(0) as u32;
        if n == 0 {
            // r = 1: the ideal is the whole ring.
            return Ok((0, YCertificate { n: 0, combination: comb, steps }));
        }
        // The least y-exponent carrying a nonzero coefficient is an invariant
        // worth protecting: as long as some commutator move keeps it nonzero
        // the descent can bottom out at that exponent rather than above it.
        let m0 = (0..=n as usize)
            .find(|&i| r.coeff(i).map(|c| !c.is_zero()).unwrap_or(false))
            .unwrap_or(n as usize);
        let mut best: Option<(Element, SkewPoly, bool)> = None;
        for q in span {
            let q_poly = SkewPoly::constant(q.clone(), d);
            let tq = SkewPoly::constant(d.sigma.apply_pow(q, -(n as i64))?, d);
            let cand = poly_mul(&q_poly, &r)?.sub(&poly_mul(&r, &tq)?)?;
            if !cand.is_zero() {
                if cand.degree().unwrap_or(0) as u32 >= n {
                    return Err(Error::Invariant(
                        "commutator move failed to reduce degree".into(),
                    ));
                }
                // Factors q − τ^j(q) with the residue characteristic dividing
                // j can cancel below the precision window and silently zero a
                // coefficient; keep looking for a q that preserves index m0.
                let keeps_m0 = cand.coeff(m0).map(|c| !c.is_zero()).unwrap_or(false);
                if keeps_m0 {
                    best = Some((q.clone(), cand, true));
                    break;
                }
                if best.is_none() {
                    best = Some((q.clone(), cand, false));
                }
            }
        }
        if let Some((q, cand, _)) = best {
            comb = YComb::Commutator {
                q,
                n,
                inner: Box::new(comb),
            };
            r = cand;
            continue;
        }
        // No commutator moved: every coefficient commutes as forced by the
        // normality relations. Under the asserted hypothesis (no power of τ
        // inner) the lower coefficients must vanish; check and certify.
        if r.sub(&y_power(d, n as usize)?)?.is_zero() {
            return Ok((n, YCertificate { n, combination: comb, steps }));
        }
        return Err(Error::HypothesisFailure(
            "a lower coefficient is normal and nonzero at horizon".into(),
        ));
    }
}

/// Certified digit of a Laurent element at absolute π-exponent `pos`, or None
/// when the position lies at or beyond the precision bound.
fn laurent_digit(e: &Element, pos: i64) -> Option<u64> {
    match &e.payload {
        crate::coeffring::Payload::Laurent(l) => {
            if pos >= l.prec {
                None
            } else if pos < l.val {
                Some(0)
            } else {
                Some(l.digits.get((pos - l.val) as usize).copied().unwrap_or(0))
            }
        }
        _ => None,
    }
}

/// Express y^m0 as an F_p-combination of the monomial multiples
/// π^α·y^β·f·π^γ·y^δ by Gaussian elimination over the certified digit
/// window, then monicize the surviving coefficient. One round of
/// multiplications keeps the full relative-precision window, so this
/// certifies instances where the iterated commutator descent runs out of
/// digits before reaching the least nonzero exponent.
fn span_combination(
    ring: &RingSpec,
    d: &DerivSpec,
    f: &SkewPoly,
    m0: usize,
    span_lo: i64,
    span_hi: i64,
) -> Result<YComb> {
    let (p, relprec) = match ring {
        RingSpec::TruncLaurent { p, relprec, .. } => (*p, *relprec),
        _ => {
            return Err(Error::Shape(
                "the two-sided combination solve needs a Laurent base".into(),
            ))
        }
    };
    // A representation of 1 certified only to the relative-precision window.
    // Exact monomial multiples would carry unbounded precision, turning the
    // digit-matching system into an exact polynomial identity with no finite
    // solution; softening each left coefficient to 1 + O(π^relprec) gives
    // every generator a finite certification window, inside which the solve
    // is complete and outside which addition truncates the residuals away.
    let soft_one = Element {
        ring: ring.clone(),
        payload: crate::coeffring::Payload::Laurent(crate::coeffring::LaurentRep {
            val: 0,
            digits: vec![1],
            prec: relprec as i64,
        }),
    };
    let deg = f
        .degree()
        .ok_or_else(|| Error::Shape("zero input".into()))?;
    let ymax = deg.saturating_sub(1);
    // Generators and their products, computed through the replay path so the
    // certificate reproduces them digit for digit.
    let mut gens: Vec<(YTerm, SkewPoly)> = Vec::new();
    for alpha in span_lo..=span_hi {
        for beta in 0..=ymax {
            for gamma in span_lo..=span_hi {
                for delta in 0..=ymax {
                    let term = YTerm {
                        scalar: 1,
                        left_q: Element::pi_pow(ring, alpha)?.mul(&soft_one)?,
                        left_y: beta as u32,
                        right_q: Element::pi_pow(ring, gamma)?,
                        right_y: delta as u32,
                    };
                    let probe = YComb::Combination {
                        terms: vec![term.clone()],
                        inner: Box::new(YComb::Input),
                    };
                    let poly = replay_y_combination(&probe, f)?;
                    gens.push((term, poly));
                }
            }
        }
    }
    let kmax = gens
        .iter()
        .filter_map(|(_, g)| g.degree())
        .max()
        .unwrap_or(0);
    // Linear system over F_p: one equation per certified digit position of
    // each y-degree. The window top is the worst precision bound over all
    // generators, so every equation involves only certified digits.
    let mut rows: Vec<Vec<u64>> = Vec::new();
    let mut rhs: Vec<u64> = Vec::new();
    for k in 0..=kmax {
        let coeffs: Vec<Element> = gens
            .iter()
            .map(|(_, g)| g.coeff(k))
            .collect::<Result<_>>()?;
        let top = coeffs
            .iter()
            .map(|c| c.precision_floor())
            .min()
            .unwrap_or(i64::MAX);
        // Exact coefficients are unbounded in precision but finite in digits:
        // positions beyond the highest stored digit are identically zero, so
        // the equation window stops there.
        let hi_digit = coeffs
            .iter()
            .filter_map(|c| match &c.payload {
                crate::coeffring::Payload::Laurent(l) if !l.digits.is_empty() => {
                    Some(l.val + l.digits.len() as i64)
                }
                _ => None,
            })
            .max()
            .unwrap_or(0)
            .max(1);
        let top = top.min(hi_digit);
        let lo = coeffs
            .iter()
            .filter(|c| !c.is_zero())
            .map(|c| c.filt().lower_bound())
            .chain((k == m0).then_some(0))
            .min()
            .unwrap_or(top);
        if k == m0 && top <= 0 {
            return Err(Error::PrecisionInsufficient(
                "no generator certifies the target digit position".into(),
            ));
        }
        let mut pos = lo;
        while pos < top {
            let row: Option<Vec<u64>> =
                coeffs.iter().map(|c| laurent_digit(c, pos)).collect();
            if let Some(row) = row {
                rows.push(row);
                rhs.push(u64::from(k == m0 && pos == 0));
            }
            pos += 1;
        }
    }
    let solution = solve_mod_p(&mut rows, &mut rhs, p).ok_or_else(|| {
        Error::PrecisionInsufficient(
            "the monomial multiples do not span the target at this window".into(),
        )
    })?;
    let mut terms: Vec<YTerm> = gens
        .iter()
        .zip(&solution)
        .filter(|(_, &x)| x != 0)
        .map(|((t, _), &x)| YTerm {
            scalar: x as i64,
            ..t.clone()
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::PrecisionInsufficient(
            "the solved combination is empty".into(),
        ));
    }
    // The solve only constrains digits below the worst precision bound per
    // y-degree, but a particular solution may use only better-certified
    // generators, leaving certified residual digits above the constrained
    // window. Adding g + (p−1)·g of the worst-certified generator at each
    // degree contributes zero while lowering the sum's precision bound to
    // the window top, so the unconstrained residuals truncate away.
    let mut padded: Vec<usize> = Vec::new();
    for k in 0..=kmax {
        let worst = gens
            .iter()
            .enumerate()
            .filter_map(|(i, (_, g))| {
                let c = g.coeff(k).ok()?;
                let floor = c.precision_floor();
                (floor < i64::MAX).then_some((i, floor))
            })
            .min_by_key(|&(_, floor)| floor)
            .map(|(i, _)| i);
        if let Some(i) = worst {
            if !padded.contains(&i) {
                padded.push(i);
            }
        }
    }
    for i in padded {
        for scalar in [1, (p - 1) as i64] {
            terms.push(YTerm {
                scalar,
                ..gens[i].0.clone()
            });
        }
    }
    let comb = YComb::Combination {
        terms,
        inner: Box::new(YComb::Input),
    };
    // Verify the replay before monicizing: the target coefficient must be a
    // certified nonzero and every other residual digit-free.
    let r = replay_y_combination(&comb, f)?;
    let lead = r.coeff(m0)?;
    if lead.is_zero() {
        return Err(Error::PrecisionInsufficient(
            "the combined target coefficient lost its digits".into(),
        ));
    }
    for k in 0..=r.degree().unwrap_or(0) {
        if k != m0 && !r.coeff(k)?.is_zero() {
            return Err(Error::PrecisionInsufficient(
                "a residual coefficient survived the solve window".into(),
            ));
        }
    }
    let u = lead.invert()?;
    let final_comb = YComb::LeftUnit {
        u,
        inner: Box::new(comb),
    };
    let check = replay_y_combination(&final_comb, f)?;
    if check.sub(&y_power(d, m0)?)?.is_zero() {
        Ok(final_comb)
    } else {
        Err(Error::PrecisionInsufficient(
            "the monicized combination did not replay to the y-power".into(),
        ))
    }
}

/// Solve A·x = b over F_p by Gaussian elimination; free variables are set to
/// zero. Returns None when the system is inconsistent.
fn solve_mod_p(rows: &mut [Vec<u64>], rhs: &mut [u64], p: u64) -> Option<Vec<u64>> {
    let m = rows.len();
    let n = rows.first().map(|r| r.len()).unwrap_or(0);
    let inv = |a: u64| -> u64 {
        // p is a small prime: Fermat inverse by repeated multiplication.
        let mut acc = 1u64;
        for _ in 0..p - 2 {
            acc = acc * a % p;
        }
        acc
    };
    let mut pivot_col = vec![usize::MAX; m];
    let mut rank = 0usize;
    for col in 0..n {
        let Some(sel) = (rank..m).find(|&i| rows[i][col] % p != 0) else {
            continue;
        };
        rows.swap(rank, sel);
        rhs.swap(rank, sel);
        let piv_inv = inv(rows[rank][col] % p);
        for j in col..n {
            rows[rank][j] = rows[rank][j] % p * piv_inv % p;
        }
        rhs[rank] = rhs[rank] % p * piv_inv % p;
        for i in 0..m {
            if i != rank && rows[i][col] % p != 0 {
                let factor = rows[i][col] % p;
                for j in col..n {
                    rows[i][j] = (rows[i][j] + (p - factor) * rows[rank][j]) % p;
                }
                rhs[i] = (rhs[i] + (p - factor) * rhs[rank]) % p;
            }
        }
        pivot_col[rank] = col;
        rank += 1;
        if rank == m {
            break;
        }
    }
    if (rank..m).any(|i| rhs[i] % p != 0) {
        return None;
    }
    let mut x = vec![0u64; n];
    for i in 0..rank {
        x[pivot_col[i]] = rhs[i] % p;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffring::random_element;
    use crate::rng::SplitMix64;
    use crate::skewmaps::{AutoPrimitive, CertWindow};

    fn laurent(p: u64, relprec: u32) -> RingSpec {
        RingSpec::TruncLaurent { p, relprec, cap: 64 }
    }

    fn iwasawa(relprec: u32) -> DerivSpec {
        let r = laurent(3, relprec);
        let f = Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        };
        DerivSpec::inner(Element::from_int(&r, -1), sigma)
    }

    fn product_fixture() -> DerivSpec {
        let base = laurent(3, 8);
        let ring = RingSpec::Product {
            factors: vec![base.clone(), base],
        };
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::CycleShift { k: 1 }],
        };
        DerivSpec::inner(Element::from_int(&ring, -1), sigma)
    }

    #[test]
    fn subring_inverse_round_trip() {
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let pi = Element::pi_pow(&ring, 1).unwrap();
        // z = 1 + π·X + π²·X².
        let z = SkewPoly::new(
            vec![Element::one(&ring), pi.clone(), pi.mul(&pi).unwrap()],
            lvl.delta_n.clone(),
        );
        let q = 4;
        let horizon = 6;
        let z_inv = subring_inverse(&z, q, horizon).unwrap();
        let one = SkewPoly::one(&lvl.delta_n).unwrap();
        let res = truncate_part(&poly_mul(&z, &z_inv).unwrap(), q).sub(&one).unwrap();
        assert!(res.coeffs.iter().all(|c| c.filt().ge(horizon)));
        let res2 = truncate_part(&poly_mul(&z_inv, &z).unwrap(), q).sub(&one).unwrap();
        assert!(res2.coeffs.iter().all(|c| c.filt().ge(horizon)));
    }

    #[test]
    fn to_crossed_basic_supports() {
        let d = iwasawa(6);
        let cd = CertifiedDeriv::new(d.clone(), 6, CertWindow::default()).unwrap();
        // f = x − t = x + 1 → support {1: 1}.
        let f = BoundedSeries::from_poly(&SkewPoly::x_minus_t(&d).unwrap(), &cd).unwrap();
        let r = to_crossed(&f, 1).unwrap();
        assert_eq!(r.support.len(), 1);
        let part = r.support.get(&1).unwrap();
        assert_eq!(part.coeffs.len(), 1);
        assert!(part.coeffs[0].sub(&Element::one(&d.ring().unwrap())).unwrap().is_zero());
        // f = g³ = X₁ − T₁ → folded to support {0: X − T}.
        let g3 = poly_pow(&SkewPoly::x_minus_t(&d).unwrap(), 3).unwrap();
        let f = BoundedSeries::from_poly(&g3, &cd).unwrap();
        let r = to_crossed(&f, 1).unwrap();
        assert_eq!(r.support.len(), 1);
        let part = r.support.get(&0).unwrap();
        let lvl = derive_level(&d, 1).unwrap();
        let c = SkewPoly::new(
            vec![lvl.t_n.neg(), Element::one(&d.ring().unwrap())],
            lvl.delta_n.clone(),
        );
        assert!(part.sub(&c).unwrap().is_zero());
    }

    #[test]
    fn to_crossed_flatten_round_trip() {
        let d = iwasawa(6);
        let cd = CertifiedDeriv::new(d.clone(), 6, CertWindow::default()).unwrap();
        let ring = d.ring().unwrap();
        let mut rng = SplitMix64::new(53);
        for _ in 0..5 {
            let coeffs: Vec<Element> = (0..9).map(|_| random_element(&ring, &mut rng)).collect();
            let f = BoundedSeries::from_poly(&SkewPoly::new(coeffs, d.clone()), &cd).unwrap();
            let r = to_crossed(&f, 1).unwrap();
            let back = flatten(&r, &cd).unwrap();
            for m in 0..9 {
                assert!(f
                    .coeff(m)
                    .unwrap()
                    .sub(&back.coeff(m).unwrap())
                    .unwrap()
                    .is_zero());
            }
        }
    }

    #[test]
    fn relations_pass_on_iwasawa_and_product() {
        for d in [iwasawa(8), product_fixture()] {
            for m in 0..=1 {
                let rep = crossed_relations(&d, m, -3, 3).unwrap();
                assert!(rep.pass, "m = {m}: {:?}", rep.checks);
            }
        }
    }

    #[test]
    fn relations_reject_non_unit_t() {
        let r = laurent(3, 6);
        let f = Element::from_laurent_digits(&r, 1, &[1, 1]).unwrap();
        let sigma = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        };
        let d = DerivSpec::inner(Element::pi_pow(&r, 1).unwrap(), sigma);
        assert!(matches!(
            crossed_relations(&d, 1, -3, 3),
            Err(Error::HypothesisFailure(_))
        ));
    }

    #[test]
    fn length_examples() {
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let one = SkewPoly::constant(Element::one(&ring), &lvl.delta_n);
        let zero = CrossedElement::zero(&lvl, &d);
        assert_eq!(zero.length(), 0);
        let mut g2 = CrossedElement::zero(&lvl, &d);
        g2.insert(2, one.clone());
        assert_eq!(g2.length(), 1);
        let mut one_plus_g = CrossedElement::zero(&lvl, &d);
        one_plus_g.insert(0, one.clone());
        one_plus_g.insert(1, one);
        assert_eq!(one_plus_g.length(), 2);
    }

    #[test]
    fn regularity_at_the_unit_instance() {
        // With t = −1, right multiplication by g = x − t is injective on
        // polynomials: f·g has degree deg f + 1.
        let d = product_fixture();
        let ring = d.ring().unwrap();
        let mut rng = SplitMix64::new(59);
        let g = SkewPoly::x_minus_t(&d).unwrap();
        for _ in 0..5 {
            let mut f = SkewPoly::new(
                (0..3).map(|_| random_element(&ring, &mut rng)).collect(),
                d.clone(),
            );
            if f.is_zero() {
                f = SkewPoly::one(&d).unwrap();
            }
            let prod = poly_mul(&f, &g).unwrap();
            assert_eq!(prod.degree(), f.degree().map(|k| k + 1));
        }
    }

    fn small_opts() -> ReductionOptions {
        ReductionOptions {
            max_depth: 3,
            max_elements: 400,
            span_lo: -2,
            span_hi: 2,
            part_order: 4,
            horizon: 6,
        }
    }

    #[test]
    fn reduce_single_g_power() {
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let mut z = CrossedElement::zero(&lvl, &d);
        z.insert(2, SkewPoly::constant(Element::one(&ring), &lvl.delta_n));
        let state = reduce_length(ReductionState::new(vec![z.clone()]), small_opts()).unwrap();
        let w = state.min_length_witness.as_ref().unwrap();
        assert_eq!(w.elem.length(), 1);
        for c in &state.classifications {
            assert!(c.unit);
        }
    }

    #[test]
    fn reduce_kills_non_invariant_coefficient() {
        // Z = π + g: the move gZ − Zg yields (σ(π) − π)·g = π²·g of length 1.
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let mut z = CrossedElement::zero(&lvl, &d);
        z.insert(
            0,
            SkewPoly::constant(Element::pi_pow(&ring, 1).unwrap(), &lvl.delta_n),
        );
        z.insert(1, SkewPoly::constant(Element::one(&ring), &lvl.delta_n));
        assert_eq!(z.length(), 2);

        // Single-move oracle.
        let child = z.mul_g_left().unwrap().sub(&z.mul_g_right().unwrap()).unwrap();
        assert_eq!(child.length(), 1);
        let part = child.support.get(&1).unwrap();
        let pi2 = Element::pi_pow(&ring, 2).unwrap();
        assert!(part.coeffs[0].sub(&pi2).unwrap().is_zero());

        let state = reduce_length(ReductionState::new(vec![z]), small_opts()).unwrap();
        let w = state.min_length_witness.as_ref().unwrap();
        assert_eq!(w.elem.length(), 1);
        // Classification of the witness: a unit coefficient implementing
        // conjugation by σ^{i−k} = id.
        assert!(state.classifications.iter().all(|c| c.unit));
        assert!(state.classifications.iter().all(|c| c.normal_witness));
    }

    #[test]
    fn frontier_combinations_replay() {
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let mut z = CrossedElement::zero(&lvl, &d);
        z.insert(
            0,
            SkewPoly::constant(Element::pi_pow(&ring, 1).unwrap(), &lvl.delta_n),
        );
        z.insert(1, SkewPoly::constant(Element::one(&ring), &lvl.delta_n));
        let opts = ReductionOptions {
            max_depth: 2,
            max_elements: 120,
            ..small_opts()
        };
        let state = reduce_length(ReductionState::new(vec![z]), opts).unwrap();
        assert!(!state.frontier.is_empty());
        for entry in &state.frontier {
            let replayed = replay_combination(&entry.combination, &state.generators, &opts)
                .unwrap()
                .normalize(opts.part_order, opts.horizon)
                .unwrap();
            assert!(replayed.sub(&entry.elem).unwrap().is_zero());
        }
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let d = iwasawa(6);
        let lvl = derive_level(&d, 1).unwrap();
        let ring = d.ring().unwrap();
        let mut z = CrossedElement::zero(&lvl, &d);
        z.insert(
            0,
            SkewPoly::constant(Element::pi_pow(&ring, 1).unwrap(), &lvl.delta_n),
        );
        z.insert(1, SkewPoly::constant(Element::one(&ring), &lvl.delta_n));
        let opts = ReductionOptions {
            max_elements: 3,
            ..small_opts()
        };
        let state = reduce_length(ReductionState::new(vec![z]), opts).unwrap();
        assert!(state.budget_exhausted);
    }

    #[test]
    fn ideal_reduce_monic_powers_and_units() {
        let ring = laurent(3, 6);
        let f = Element::from_laurent_digits(&ring, 1, &[1, 1]).unwrap();
        let tau = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f }],
        };
        let d = y_deriv(&ring, &tau);
        // f = y² → n = 2.
        let y2 = SkewPoly::new(
            vec![
                Element::zero(&ring),
                Element::zero(&ring),
                Element::one(&ring),
            ],
            d.clone(),
        );
        let (n, cert) = ideal_reduce_y(&ring, &tau, &y2, -3, 3, 50).unwrap();
        assert_eq!(n, 2);
        let replayed = replay_y_combination(&cert.combination, &y2).unwrap();
        let target = SkewPoly::new(
            vec![
                Element::zero(&ring),
                Element::zero(&ring),
                Element::one(&ring),
            ],
            d.clone(),
        );
        assert!(replayed.sub(&target).unwrap().is_zero());
        // f = unit constant → n = 0.
        let u = SkewPoly::constant(Element::from_int(&ring, 2), &d);
        let (n, _) = ideal_reduce_y(&ring, &tau, &u, -3, 3, 50).unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn ideal_reduce_degree_drop_through_commutators() {
        // f = π·y + y² over TruncLaurent(3,6) with τ = Subst(π+π²): the
        // commutator moves strictly reduce degree because τ ≠ id at horizon,
        // landing on the monic power y¹.
        let ring = laurent(3, 6);
        let fmap = Element::from_laurent_digits(&ring, 1, &[1, 1]).unwrap();
        let tau = AutoSpec {
            chain: vec![AutoPrimitive::Subst { f: fmap }],
        };
        let d = y_deriv(&ring, &tau);
        let f = SkewPoly::new(
            vec![
                Element::zero(&ring),
                Element::pi_pow(&ring, 1).unwrap(),
                Element::one(&ring),
            ],
            d.clone(),
        );
        let (n, cert) = ideal_reduce_y(&ring, &tau, &f, -3, 3, 50).unwrap();
        assert_eq!(n, 1);
        let replayed = replay_y_combination(&cert.combination, &f).unwrap();
        let y1 = SkewPoly::new(
            vec![Element::zero(&ring), Element::one(&ring)],
            d.clone(),
        );
        assert!(replayed.sub(&y1).unwrap().is_zero());
    }
}
