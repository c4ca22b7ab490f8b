//! Configuration ingestion, suite execution, and byte-stable report
//! emission for the command-line entry point.
//!
//! Config schema identifier: `skewseries-config-1`.
//! Report schema identifier: `skewseries-report-1`.

use std::time::Instant;

use crate::coeffring::{random_element, Element, RingSpec};
use crate::crossed::{
    crossed_relations, flatten, ideal_reduce_y, reduce_length, replay_combination,
    replay_y_combination, to_crossed, CrossedElement, ReductionOptions, ReductionState,
};
use crate::error::{Error, Result};
use crate::rebase::{neumann_inverse, BandMatrix, Basis, Rebaser};
use crate::rng::SplitMix64;
use crate::series::{
    random_series, relation_check, series_agree, series_mul, CertifiedDeriv, MulOptions,
    RelationKind, SkewPoly,
};
use crate::skewmaps::{
    certify, check_commuting, delta_power_closed, derive_level, reverify_certificate,
    AutoPrimitive, AutoSpec, CertMode, CertWindow, DerivForm, DerivSpec,
};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: &str = "skewseries-config-1";
pub const REPORT_VERSION: &str = "skewseries-report-1";

// --- config schema ----------------------------------------------------------

/// Ring-element literal used in config files; resolved against the session
/// ring so fixtures stay readable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementLit {
    Int { int: i64 },
    PiPow { pi_pow: i64 },
    Laurent { val: i64, digits: Vec<u64> },
    Matrix { matrix: Vec<ElementLit> },
    Product { product: Vec<ElementLit> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AutoLit {
    Subst { f: ElementLit },
    Conj { a: ElementLit },
    CycleShift { k: i64 },
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaLit {
    Inner { t: ElementLit },
    BaseTwisted { theta_pi: ElementLit },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Precisions {
    /// Must match the relative precision declared in the ring spec.
    pub relprec: Option<u32>,
    /// Valuation cap: the canonical filtration of an exact zero.
    pub cap: Option<i64>,
    /// Horizon for at-horizon predicates and certificates.
    pub horizon: Option<i64>,
}

impl Default for Precisions {
    fn default() -> Self {
        Precisions {
            relprec: None,
            cap: None,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowLit {
    pub i_lo: Option<i64>,
    pub i_hi: Option<i64>,
    pub j_hi: Option<u32>,
    pub n_max: Option<u32>,
    pub span_lo: Option<i64>,
}

impl Default for WindowLit {
    fn default() -> Self {
        WindowLit {
            i_lo: None,
            i_hi: None,
            j_hi: None,
            n_max: None,
            span_lo: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub version: String,
    pub ring: RingSpec,
    pub sigma: Vec<AutoLit>,
    pub delta: DeltaLit,
    #[serde(default)]
    pub precisions: Precisions,
    #[serde(default)]
    pub certificate_window: WindowLit,
    #[serde(default)]
    pub seeds: u64,
    #[serde(default)]
    pub suites: Vec<String>,
    #[serde(default)]
    pub output: Option<String>,
}

/// A validated session: the concrete ring, maps, and certification knobs.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: SessionConfig,
    pub ring: RingSpec,
    pub deriv: DerivSpec,
    pub horizon: i64,
    pub window: CertWindow,
    pub seed: u64,
}

fn config_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn with_cap(ring: &RingSpec, cap: i64) -> RingSpec {
    match ring {
        RingSpec::TruncLaurent { p, relprec, .. } => RingSpec::TruncLaurent {
            p: *p,
            relprec: *relprec,
            cap,
        },
        RingSpec::Matrix { size, base } => RingSpec::Matrix {
            size: *size,
            base: Box::new(with_cap(base, cap)),
        },
        RingSpec::Product { factors } => RingSpec::Product {
            factors: factors.iter().map(|f| with_cap(f, cap)).collect(),
        },
        RingSpec::Zmod { .. } => ring.clone(),
    }
}

fn ring_relprec(ring: &RingSpec) -> Option<u32> {
    match ring {
        RingSpec::TruncLaurent { relprec, .. } => Some(*relprec),
        RingSpec::Matrix { base, .. } => ring_relprec(base),
        RingSpec::Product { factors } => factors.first().and_then(ring_relprec),
        RingSpec::Zmod { .. } => None,
    }
}

pub fn resolve_element(lit: &ElementLit, ring: &RingSpec, path: &str) -> Result<Element> {
    match lit {
        ElementLit::Int { int } => Ok(Element::from_int(ring, *int)),
        ElementLit::PiPow { pi_pow } => Element::pi_pow(ring, *pi_pow)
            .map_err(|e| config_err(path, format!("pi_pow invalid here: {e}"))),
        ElementLit::Laurent { val, digits } => Element::from_laurent_digits(ring, *val, digits)
            .map_err(|e| config_err(path, format!("laurent literal invalid here: {e}"))),
        ElementLit::Matrix { matrix } => match ring {
            RingSpec::Matrix { size, base } => {
                if matrix.len() != size * size {
                    return Err(config_err(
                        path,
                        format!("expected {} entries, found {}", size * size, matrix.len()),
                    ));
                }
                let mut entries = Vec::with_capacity(matrix.len());
                for (i, e) in matrix.iter().enumerate() {
                    entries.push(resolve_element(e, base, &format!("{path}.matrix[{i}]"))?);
                }
                Element::from_entries(ring, entries).map_err(|e| config_err(path, e))
            }
            _ => Err(config_err(path, "matrix literal over a non-matrix ring")),
        },
        ElementLit::Product { product } => match ring {
            RingSpec::Product { factors } => {
                if product.len() != factors.len() {
                    return Err(config_err(
                        path,
                        format!("expected {} factors, found {}", factors.len(), product.len()),
                    ));
                }
                let mut parts = Vec::with_capacity(product.len());
                for (i, (e, fr)) in product.iter().zip(factors).enumerate() {
                    parts.push(resolve_element(e, fr, &format!("{path}.product[{i}]"))?);
                }
                Element::from_factors(ring, parts).map_err(|e| config_err(path, e))
            }
            _ => Err(config_err(path, "product literal over a non-product ring")),
        },
    }
}

fn resolve_sigma(lits: &[AutoLit], ring: &RingSpec) -> Result<AutoSpec> {
    let mut chain = Vec::new();
    for (i, lit) in lits.iter().enumerate() {
        let path = format!("sigma[{i}]");
        match lit {
            AutoLit::Identity => {}
            AutoLit::Subst { f } => {
                let base = match ring {
                    RingSpec::TruncLaurent { .. } => ring.clone(),
                    RingSpec::Matrix { base, .. } => (**base).clone(),
                    RingSpec::Product { factors } => factors[0].clone(),
                    RingSpec::Zmod { .. } => {
                        return Err(config_err(&path, "subst needs a Laurent-based ring"))
                    }
                };
                let f = resolve_element(f, &base, &format!("{path}.f"))?;
                chain.push(AutoPrimitive::Subst { f });
            }
            AutoLit::Conj { a } => {
                let a = resolve_element(a, ring, &format!("{path}.a"))?;
                if a.invert().is_err() {
                    return Err(config_err(&format!("{path}.a"), "conjugator is not a unit"));
                }
                chain.push(AutoPrimitive::Conj { a });
            }
            AutoLit::CycleShift { k } => chain.push(AutoPrimitive::CycleShift { k: *k }),
        }
    }
    let sigma = AutoSpec { chain };
    sigma.validate().map_err(|e| config_err("sigma", e))?;
    Ok(sigma)
}

pub fn load_config(bytes: &[u8]) -> Result<Session> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
    let config: SessionConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
    if config.version != CONFIG_VERSION {
        return Err(config_err(
            "version",
            format!("expected {CONFIG_VERSION:?}, found {:?}", config.version),
        ));
    }
    let cap = config.precisions.cap.unwrap_or(64);
    let ring = with_cap(&config.ring, cap);
    ring.validate().map_err(|e| config_err("ring", e))?;
    if let (Some(want), Some(have)) = (config.precisions.relprec, ring_relprec(&ring)) {
        if want != have {
            return Err(config_err(
                "precisions.relprec",
                format!("{want} does not match the ring's relative precision {have}"),
            ));
        }
    }
    let sigma = resolve_sigma(&config.sigma, &ring)?;
    let form = match &config.delta {
        DeltaLit::Inner { t } => DerivForm::Inner {
            t: resolve_element(t, &ring, "delta.t")?,
        },
        DeltaLit::BaseTwisted { theta_pi } => {
            let base = match &ring {
                RingSpec::TruncLaurent { .. } => ring.clone(),
                RingSpec::Matrix { base, .. } => (**base).clone(),
                RingSpec::Product { factors } => factors[0].clone(),
                RingSpec::Zmod { .. } => {
                    return Err(config_err(
                        "delta",
                        "base_twisted is restricted to char-p Laurent-based rings",
                    ))
                }
            };
            DerivForm::BaseTwisted {
                theta_pi: resolve_element(theta_pi, &base, "delta.theta_pi")?,
            }
        }
    };
    let deriv = DerivSpec { form, sigma };
    deriv
        .validate(&ring)
        .map_err(|e| config_err("delta", e))?;
    let defaults = CertWindow::default();
    let w = &config.certificate_window;
    let window = CertWindow {
        i_lo: w.i_lo.unwrap_or(defaults.i_lo),
        i_hi: w.i_hi.unwrap_or(defaults.i_hi),
        j_hi: w.j_hi.unwrap_or(defaults.j_hi),
        n_max: w.n_max.unwrap_or(defaults.n_max),
        span_lo: w.span_lo.unwrap_or(defaults.span_lo),
    };
    let horizon = config.precisions.horizon.unwrap_or(8);
    let seed = config.seeds;
    Ok(Session {
        config,
        ring,
        deriv,
        horizon,
        window,
        seed,
    })
}

// --- report schema ----------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    pub detail: Vec<String>,
    pub witnesses: Vec<String>,
    #[serde(skip)]
    pub failure_code: i32,
    #[serde(skip)]
    pub wall_ms: u128,
}

impl SuiteResult {
    fn new(name: &str) -> SuiteResult {
        SuiteResult {
            name: name.into(),
            pass: true,
            detail: Vec::new(),
            witnesses: Vec::new(),
            failure_code: 6,
            wall_ms: 0,
        }
    }

    fn fail(&mut self, code: i32, msg: impl Into<String>) {
        self.pass = false;
        self.failure_code = code;
        self.detail.push(msg.into());
    }
}

/// Byte-stable under fixed config and seed: wall time is reported on the
/// human-readable summary only, never in this structure.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: SessionConfig,
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    Cert,
    Mul,
    Decompose,
    Crossed,
    Reduce,
    Selftest,
}

impl Cmd {
    pub fn parse(s: &str) -> Result<Cmd> {
        match s {
            "cert" => Ok(Cmd::Cert),
            "mul" => Ok(Cmd::Mul),
            "decompose" => Ok(Cmd::Decompose),
            "crossed" => Ok(Cmd::Crossed),
            "reduce" => Ok(Cmd::Reduce),
            "selftest" => Ok(Cmd::Selftest),
            other => Err(Error::Config(format!(
                "unknown command {other:?}; expected cert|mul|decompose|crossed|reduce|selftest"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Cmd::Cert => "cert",
            Cmd::Mul => "mul",
            Cmd::Decompose => "decompose",
            Cmd::Crossed => "crossed",
            Cmd::Reduce => "reduce",
            Cmd::Selftest => "selftest",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Shape(_)
        | Error::RingMismatch(_)
        | Error::DerivMismatch(_)
        | Error::OutOfRange(_) => 2,
        Error::MissingCertificate(_) | Error::HypothesisFailure(_) => 3,
        Error::GuaranteeUnreachable { .. } => 4,
        Error::BudgetExhausted(_) => 5,
        Error::Invariant(_)
        | Error::NotAUnit(_)
        | Error::PrecisionInsufficient(_)
        | Error::NotStrictlyLower => 6,
    }
}

// --- suites -----------------------------------------------------------------

fn suite_cert(s: &Session) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("certificate");
    let cert = certify(&s.deriv, s.horizon, s.window)?;
    out.detail.push(format!("mode={:?}", cert.mode));
    out.detail.push(format!("b={}", cert.b));
    out.detail.push(format!("n={:?}", cert.n));
    for w in &cert.witnesses {
        out.witnesses
            .push(format!("{:?} (i={}, j={}) deg={}", w.kind, w.i, w.j, w.observed));
    }
    if let Some(fw) = &cert.failure_witness {
        out.witnesses.push(format!(
            "failure at cell {:?}: full={} half={} ({})",
            fw.cell, fw.observed_full, fw.observed_half, fw.description
        ));
    }
    if !reverify_certificate(&s.deriv, &cert)? {
        out.fail(3, "stored witnesses did not re-verify");
    }
    if cert.mode == CertMode::Failed {
        out.fail(3, "certificate mode is failed");
    }
    let commuting = check_commuting(&s.deriv, s.horizon, s.window.span_lo)?;
    out.detail
        .push(format!("commuting check: {}", commuting.pass));
    if !commuting.pass {
        out.fail(3, commuting.detail);
    }
    let maps = suite_maps(s, s.seed)?;
    out.detail.extend(maps.detail);
    out.witnesses.extend(maps.witnesses);
    if !maps.pass {
        out.pass = false;
        out.failure_code = maps.failure_code;
    }
    Ok(out)
}

fn certified(s: &Session) -> Result<CertifiedDeriv> {
    CertifiedDeriv::new(s.deriv.clone(), s.horizon, s.window)
}

fn suite_mul(s: &Session, seed: u64) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("series-product");
    let cd = certified(s)?;
    if cd.tail_data().is_err() {
        out.detail.push(
            "skipped: no (B, N) tail data — the certificate is strongly bounded only".into(),
        );
        return Ok(out);
    }
    let mut rng = SplitMix64::new(seed ^ 0x6d756c);
    let k_out = 4;
    for case in 0..10 {
        let f = random_series(&cd, 4, &mut rng)?;
        let g = random_series(&cd, 4, &mut rng)?;
        let h = random_series(&cd, 4, &mut rng)?;
        let (fg, k_in) = series_mul(&f, &g, k_out, MulOptions::default())?;
        let (fg_h, _) = series_mul(&fg, &h, k_out, MulOptions::default())?;
        let (gh, _) = series_mul(&g, &h, k_out + k_in, MulOptions::default())?;
        let (f_gh, _) = series_mul(&f, &gh, k_out, MulOptions::default())?;
        if !series_agree(&fg_h, &f_gh)? {
            out.fail(6, format!("associativity defect on case {case}"));
            break;
        }
        let (fg2, _) = series_mul(
            &f,
            &g,
            k_out,
            MulOptions {
                k_in: Some(2 * k_in.max(1)),
                p_target: None,
            },
        )?;
        for k in 0..=k_out {
            let diff = fg.coeff(k)?.sub(&fg2.coeff(k)?)?;
            // Cancellation of equal values leaves a digit-free zero whose
            // recorded precision may sit below the guarantee; only a diff
            // with actual digits inside the guarantee is a defect.
            if !diff.is_zero() && !diff.filt().ge(fg.guarantee(k)) {
                out.fail(
                    6,
                    format!("doubled cutoff moved coefficient {k} inside its guarantee"),
                );
            }
        }
        if case == 0 {
            out.detail.push(format!(
                "guarantees at K_out={k_out}: {:?} (K_in={k_in})",
                fg.guarantees
            ));
        }
    }
    Ok(out)
}

fn suite_maps(s: &Session, seed: u64) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("maps");
    let mut rng = SplitMix64::new(seed ^ 0x6d617073);
    let d = &s.deriv;
    let ring = &s.ring;
    // Twisted Leibniz rule on seeded pairs.
    for _ in 0..20 {
        let r = random_element(ring, &mut rng);
        let q = random_element(ring, &mut rng);
        let lhs = d.apply(&r.mul(&q)?)?;
        let rhs = d.apply(&r)?.mul(&q)?.add(&d.sigma.apply(&r, false)?.mul(&d.apply(&q)?)?)?;
        if !lhs.sub(&rhs)?.is_zero() {
            out.fail(6, "Leibniz defect");
            out.witnesses.push(format!("r={r} q={q}"));
            break;
        }
    }
    // Closed form against the iterate.
    if d.sigma_fixes_t().unwrap_or(false) {
        for n in 0..=4u32 {
            for _ in 0..5 {
                let x = random_element(ring, &mut rng);
                let closed = delta_power_closed(d, n, &x)?;
                let iter = d.apply_n(&x, n)?;
                if !closed.sub(&iter)?.is_zero() {
                    out.fail(6, format!("closed form defect at n={n}"));
                }
            }
        }
        out.detail.push("closed form checked for n ≤ 4".into());
    } else {
        out.detail.push("closed form skipped: σ moves t".into());
    }
    // Level-1 subring relation on the spanning set.
    if matches!(d.form, DerivForm::Inner { .. }) && d.sigma_fixes_t().unwrap_or(false) {
        let lvl = derive_level(d, 1)?;
        // The spanning span stays narrow: elements near π^{-relprec} exhaust
        // relative precision and turn the relation into a vacuous check.
        let rel = relation_check(RelationKind::Subring, d, Some(&lvl), -3, 3)?;
        out.detail.push(format!("subring relation level 1: {}", rel.pass));
        if !rel.pass {
            out.fail(6, rel.detail);
        }
    }
    Ok(out)
}

/// Two elements agree at precision when their difference sits at or above
/// the coarser side's precision floor.
fn elements_agree(x: &Element, y: &Element) -> Result<bool> {
    let diff = x.sub(y)?;
    let floor = x.precision_floor().min(y.precision_floor());
    if let crate::filt::FiltValue::Finite(v) = diff.filt() {
        if v < floor {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Coefficient vectors agree when every entry-wise difference sits at or
/// above the coarser entry's precision floor.
fn parts_agree(a: &[Vec<Element>], b: &[Vec<Element>]) -> Result<bool> {
    if a.len() != b.len() {
        return Ok(false);
    }
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != rb.len() {
            return Ok(false);
        }
        for (x, y) in ra.iter().zip(rb) {
            if !elements_agree(x, y)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn suite_decompose(s: &Session, seed: u64) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("decompose");
    let cd = certified(s)?;
    if !s.deriv.sigma_fixes_t().unwrap_or(false) {
        out.detail
            .push("skipped: the change of basis needs σ(t) = t".into());
        return Ok(out);
    }
    let mut rng = SplitMix64::new(seed ^ 0x646563);
    for basis in [Basis::XPowers, Basis::XMinusTPowers] {
        let reb = Rebaser::new(&cd, 1, basis, 1)?;
        for _ in 0..5 {
            let f = random_series(&cd, reb.k, &mut rng)?;
            let dec = reb.decompose(&f)?;
            let back = reb.recompose(&dec)?;
            for m in 0..=reb.k {
                if !elements_agree(&f.coeff(m)?, &back.coeff(m)?)? {
                    out.fail(6, format!("round-trip defect at coefficient {m}"));
                }
            }
            let dec2 = reb.decompose(&back)?;
            if !parts_agree(&dec.parts, &dec2.parts)? {
                out.fail(6, "freeness defect: decompose∘recompose moved the parts");
            }
        }
    }
    // Neumann identity for the seeded strictly-lower matrix.
    let mut u = BandMatrix::zero(&s.ring, 4);
    for i in 1..=4usize {
        for j in 0..i {
            u.entries[i][j] = random_element(&s.ring, &mut rng);
        }
    }
    u.lower_bound = u.observed_lower_bound();
    let b = neumann_inverse(&u)?;
    let a = BandMatrix::identity(&s.ring, 4).sub(&u)?;
    let id = BandMatrix::identity(&s.ring, 4);
    if crate::rebase::mat_mul(&a, &b)? != id || crate::rebase::mat_mul(&b, &a)? != id {
        out.fail(6, "Neumann inverse is not two-sided at truncation");
    }
    out.detail.push("round trips at level 1, both bases".into());
    Ok(out)
}

fn g_is_unit(d: &DerivSpec) -> bool {
    match &d.form {
        DerivForm::Inner { t } => {
            t.filt().lower_bound() == 0
                && t.invert()
                    .map(|ti| ti.filt().lower_bound() == 0)
                    .unwrap_or(false)
        }
        _ => false,
    }
}

fn suite_crossed(s: &Session, seed: u64) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("crossed");
    if !g_is_unit(&s.deriv) || !s.deriv.sigma_fixes_t().unwrap_or(false) {
        out.detail
            .push("skipped: needs the unit instance (t and t^{-1} at filtration 0, σ(t) = t)".into());
        return Ok(out);
    }
    for m in 0..=1u32 {
        let rep = crossed_relations(&s.deriv, m, s.window.span_lo, s.horizon)?;
        for c in &rep.checks {
            out.detail.push(format!("m={m}: {} — {}", c.pass, c.detail));
        }
        if !rep.pass {
            out.fail(6, format!("crossed relations failed at level {m}"));
        }
    }
    let cd = certified(s)?;
    let mut rng = SplitMix64::new(seed ^ 0x63726f73);
    let pm = s.ring.prime() as usize;
    for _ in 0..3 {
        let f = random_series(&cd, 2 * pm + (pm - 1), &mut rng)?;
        let r = to_crossed(&f, 1)?;
        let back = flatten(&r, &cd)?;
        for k in 0..=f.k_order() {
            if !elements_agree(&f.coeff(k)?, &back.coeff(k)?)? {
                out.fail(6, format!("to_crossed/flatten defect at coefficient {k}"));
            }
        }
    }
    Ok(out)
}

fn suite_reduce(s: &Session, seed: u64, budget: usize) -> Result<SuiteResult> {
    let mut out = SuiteResult::new("reduce");
    let mut rng = SplitMix64::new(seed ^ 0x726564);
    if g_is_unit(&s.deriv) && s.deriv.sigma_fixes_t().unwrap_or(false) {
        let lvl = derive_level(&s.deriv, 1)?;
        let opts = ReductionOptions {
            max_depth: 3,
            max_elements: budget.min(2000),
            span_lo: -2,
            span_hi: 2,
            part_order: 4,
            horizon: s.horizon,
        };
        for case in 0..3 {
            let mut z = CrossedElement::zero(&lvl, &s.deriv);
            for i in 0..2 {
                z.insert(
                    i,
                    SkewPoly::constant(random_element(&s.ring, &mut rng), &lvl.delta_n),
                );
            }
            if z.is_zero() {
                continue;
            }
            let before = z.length();
            let state = reduce_length(ReductionState::new(vec![z]), opts)?;
            let w = match &state.min_length_witness {
                Some(w) => w,
                None => {
                    if state.budget_exhausted {
                        out.fail(5, format!("reduction budget exhausted on case {case}"));
                    }
                    continue;
                }
            };
            if state.budget_exhausted {
                out.detail
                    .push(format!("case {case}: search truncated at the element budget"));
            }
            if w.elem.length() > before {
                out.fail(6, "reduction increased the minimal length");
            }
            let replayed = replay_combination(&w.combination, &state.generators, &opts)?
                .normalize(opts.part_order, opts.horizon)?;
            if !replayed.sub(&w.elem)?.is_zero() {
                out.fail(6, "witness combination did not replay");
            }
            if case == 0 {
                out.detail.push(format!(
                    "min length {} at depth {} ({} frontier elements)",
                    w.elem.length(),
                    w.depth,
                    state.frontier.len()
                ));
            }
        }
    } else {
        out.detail
            .push("length reduction skipped: needs the unit instance".into());
    }
    // Principal-ideal reduction in Q[y; τ] over the Laurent base.
    if matches!(s.ring, RingSpec::TruncLaurent { .. }) && !s.deriv.sigma.chain.is_empty() {
        let tau = s.deriv.sigma.clone();
        let d = crate::crossed::y_deriv(&s.ring, &tau);
        let f = SkewPoly::new(
            vec![
                Element::zero(&s.ring),
                Element::pi_pow(&s.ring, 1)?,
                Element::one(&s.ring),
            ],
            d.clone(),
        );
        let (n, cert) = ideal_reduce_y(&s.ring, &tau, &f, -3, 3, budget.max(8))?;
        let replayed = replay_y_combination(&cert.combination, &f)?;
        let mut target = vec![Element::zero(&s.ring); n as usize + 1];
        target[n as usize] = Element::one(&s.ring);
        let y_n = SkewPoly::new(target, d);
        if !replayed.sub(&y_n)?.is_zero() {
            out.fail(6, "ideal certificate did not replay to the monic power");
        }
        out.detail
            .push(format!("ideal (π·y + y²) reduces to y^{n} in {} steps", cert.steps));
    } else {
        out.detail
            .push("ideal reduction skipped: needs a Laurent base with τ ≠ id".into());
    }
    Ok(out)
}

fn run_suite(
    cmd: Cmd,
    s: &Session,
    seed: u64,
    budget: usize,
) -> SuiteResult {
    let start = Instant::now();
    let mut result = match cmd {
        Cmd::Cert => suite_cert(s),
        Cmd::Mul => suite_mul(s, seed),
        Cmd::Decompose => suite_decompose(s, seed),
        Cmd::Crossed => suite_crossed(s, seed),
        Cmd::Reduce => suite_reduce(s, seed, budget),
        Cmd::Selftest => unreachable!("selftest fans out"),
    }
    .unwrap_or_else(|e| {
        let mut r = SuiteResult::new(cmd.name());
        r.fail(exit_code(&e), format!("{e}"));
        r
    });
    result.wall_ms = start.elapsed().as_millis();
    result
}

/// Execute a command against a validated session. Returns the report and
/// the process exit code (0 all-pass; 2 config; 3 certificate failure;
/// 4 guarantee unreachable; 5 budget exhausted; 6 invariant failure).
pub fn run(cmd: Cmd, s: &Session, seed: u64, budget: usize, parallel: usize) -> (Report, i32) {
    let plan: Vec<Cmd> = match cmd {
        Cmd::Selftest => {
            let all = [Cmd::Cert, Cmd::Mul, Cmd::Decompose, Cmd::Crossed, Cmd::Reduce];
            if s.config.suites.is_empty() {
                all.to_vec()
            } else {
                all.iter()
                    .copied()
                    .filter(|c| s.config.suites.iter().any(|n| n == c.name() || n == "certificate"  && *c == Cmd::Cert))
                    .collect()
            }
        }
        single => vec![single],
    };
    let suites: Vec<SuiteResult> = if parallel > 1 && plan.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .iter()
                .map(|&c| scope.spawn(move || run_suite(c, s, seed, budget)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("suite worker")).collect()
        })
    } else {
        plan.iter().map(|&c| run_suite(c, s, seed, budget)).collect()
    };
    let pass = suites.iter().all(|r| r.pass);
    let code = if pass {
        0
    } else {
        suites
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.failure_code)
            .next()
            .unwrap_or(6)
    };
    let report = Report {
        version: REPORT_VERSION.into(),
        command: cmd.name().into(),
        seed,
        config: s.config.clone(),
        suites,
        pass,
    };
    (report, code)
}

/// The stable serialized form of a report (pretty JSON plus a trailing
/// newline); byte-identical under fixed config and seed.
pub fn render_report(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialization");
    s.push('\n');
    s
}

pub fn version_banner() -> String {
    format!("{CONFIG_VERSION} / {REPORT_VERSION}")
}
