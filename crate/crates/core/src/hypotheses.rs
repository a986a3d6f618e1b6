//! Constants, coalescence thresholds and hypothesis certification for a
//! scenario `(K, b, E, f_in)`.
//!
//! Daughter constants are closed forms. The integrability exponent `p` of
//! the uniform integrability bound is fixed to the smallest integer above
//! the family's lower limit plus two, so `theta = 1/p` is reproducible.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::daughter::{DaughterSpec, ProbSpec};
use crate::error::{domain, Result};
use crate::grid::InitialCondition;
use crate::kernels::{classify_growth, halton_points, GrowthClass, KernelSpec, SampleBox, Worst, SAMPLE_TOL};

/// Lower bound on `E` over `(0,1)^2`:
/// `max{0, (beta - 2^{1+2 alpha}) / (beta - 1)}`.
pub fn coalescence_threshold(beta: f64, alpha: f64) -> Result<f64> {
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(domain(format!("threshold needs a finite beta >= 1, got {beta}")));
    }
    if !(0.0..0.5).contains(&alpha) {
        return Err(domain(format!("threshold needs alpha in [0, 1/2), got {alpha}")));
    }
    let cap = 2f64.powf(1.0 + 2.0 * alpha);
    if beta <= cap {
        return Ok(0.0);
    }
    Ok((beta - cap) / (beta - 1.0))
}

/// Threshold for `b_nu` with a bounded kernel: `max{0, -nu}`.
pub fn threshold_power_total(nu: f64) -> Result<f64> {
    if !(nu > -1.0) {
        return Err(domain(format!("threshold needs nu > -1, got {nu}")));
    }
    Ok((-nu).max(0.0))
}

/// Threshold for the per-particle family with a bounded kernel: `2/(nu+3)`.
pub fn threshold_power_each(nu: f64) -> Result<f64> {
    if !(nu > -1.0) {
        return Err(domain(format!("threshold needs nu > -1, got {nu}")));
    }
    Ok(2.0 / (nu + 3.0))
}

/// Threshold for `b_nu` with the sum/product kernel at `zeta < 0`.
pub fn threshold_singular(nu: f64, zeta: f64) -> Result<f64> {
    if !(zeta > -0.5 && zeta < 0.0) {
        return Err(domain(format!("threshold needs zeta in (-1/2, 0), got {zeta}")));
    }
    if !(nu > -2.0 * zeta - 1.0) {
        return Err(domain(format!(
            "threshold needs nu > 2 alpha - 1 = {}, got {nu}",
            -2.0 * zeta - 1.0
        )));
    }
    let num = nu + 2.0 - (nu + 1.0 + 2.0 * zeta) * 2f64.powf(1.0 - 2.0 * zeta);
    Ok((num / (1.0 - 2.0 * zeta)).max(0.0))
}

/// Threshold for `b_nu` with the ratio kernel at `sigma > 0`.
pub fn threshold_bg(nu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(domain(format!("threshold needs sigma in (0, 1), got {sigma}")));
    }
    if !(nu > sigma - 1.0) {
        return Err(domain(format!("threshold needs nu > sigma - 1, got {nu}")));
    }
    let num = nu + 2.0 - (nu + 1.0 - sigma) * 2f64.powf(1.0 + sigma);
    Ok((num / (1.0 + sigma)).max(0.0))
}

/// Daughter constants attached to a singularity exponent `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DaughterConstants {
    pub alpha: f64,
    /// Integrability exponent of the uniform integrability bound.
    pub p: Option<u32>,
    pub theta: Option<f64>,
    /// `C_p` in `omega(xi) = C_p xi^{1/p}`.
    pub omega_c: Option<f64>,
    pub beta_0: Option<f64>,
    pub beta_minus_theta: Option<f64>,
    pub beta_minus_2alpha: Option<f64>,
    pub b_minus_alpha: Option<f64>,
    /// `beta'_{-theta}` of the strengthened small-volume bound.
    pub beta_prime: Option<f64>,
    /// Why some constants are missing.
    pub notes: Vec<String>,
}

impl DaughterConstants {
    pub fn omega(&self, xi: f64) -> Option<f64> {
        Some(self.omega_c? * xi.powf(self.theta?))
    }
}

/// Closed-form constants of `daughter` against a kernel with exponent `alpha`.
pub fn daughter_constants(daughter: &DaughterSpec, alpha: f64) -> DaughterConstants {
    let nu = daughter.nu();
    let mut c = DaughterConstants {
        alpha,
        p: None,
        theta: None,
        omega_c: None,
        beta_0: (nu > -1.0).then(|| match daughter {
            DaughterSpec::PowerEach { .. } => 2.0 * (nu + 2.0) / (nu + 1.0),
            _ => (nu + 2.0) / (nu + 1.0),
        }),
        beta_minus_theta: None,
        beta_minus_2alpha: None,
        b_minus_alpha: None,
        beta_prime: None,
        notes: Vec::new(),
    };
    let each = matches!(daughter, DaughterSpec::PowerEach { .. });
    if each && alpha > 0.0 {
        c.notes
            .push("power_each daughter is only admissible for alpha = 0".to_string());
        return c;
    }
    let lower = if alpha > 0.0 {
        if !(nu > 2.0 * alpha - 1.0) {
            c.notes.push(format!(
                "nu = {nu} must exceed 2 alpha - 1 = {}",
                2.0 * alpha - 1.0
            ));
            return c;
        }
        (1.0 / alpha).max(1.0 / (nu + 1.0 - alpha))
    } else {
        if !(nu > -1.0) {
            c.notes.push(format!("nu = {nu} must exceed -1"));
            return c;
        }
        1.0 / (nu + 1.0)
    };
    let p = lower.floor() as u32 + 3;
    let pf = p as f64;
    let theta = 1.0 / pf;
    c.p = Some(p);
    c.theta = Some(theta);
    c.omega_c = Some(
        (nu + 2.0) * ((pf - 1.0) / (pf * (nu + 1.0 - alpha) - 1.0)).powf((pf - 1.0) / pf),
    );
    let scale = if each { 2.0 } else { 1.0 };
    if alpha > 0.0 {
        c.beta_minus_2alpha = Some((nu + 2.0) / (nu + 1.0 - 2.0 * alpha));
    } else {
        c.beta_minus_2alpha = c.beta_0;
        c.beta_minus_theta = Some(scale * (nu + 2.0) / (nu + 1.0 - theta));
        c.beta_prime = Some(2.0 * (nu + 2.0) / (nu + 1.0 - theta));
    }
    c.b_minus_alpha = Some(match daughter {
        DaughterSpec::PowerEach { .. } => 2.0 * (nu + 2.0) / (nu + 1.0),
        _ => (nu + 2.0) / (nu + 1.0 - alpha),
    });
    c
}

/// A finite union of disjoint open intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSet {
    pub intervals: Vec<(f64, f64)>,
}

impl TrialSet {
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// Unions of up to four intervals inside `(0, R)`, `R` in `{1, 10}`, with
/// measures `10^{-6}, ..., 1`. Each placement pattern yields a nested chain
/// (the set at one measure contains the sets at smaller measures), so the
/// sampled maxima are comparable across measures. Anchors come from a
/// radical-inverse sequence so the family is reproducible.
pub fn default_trial_sets() -> Vec<TrialSet> {
    let mut chains: Vec<Box<dyn Fn(f64) -> Vec<(f64, f64)>>> = Vec::new();
    let mut k = 1u64;
    for r in [1.0f64, 10.0] {
        chains.push(Box::new(|mu| vec![(0.0, mu)]));
        chains.push(Box::new(move |mu| vec![(r - mu, r)]));
        for pieces in 1..=4usize {
            for _ in 0..3 {
                let slot = r / pieces as f64;
                let room = slot - 1.0 / pieces as f64;
                let anchors: Vec<f64> = (0..pieces)
                    .map(|s| {
                        let u = crate::kernels::radical_inverse(k + s as u64, 5);
                        s as f64 * slot + u * room
                    })
                    .collect();
                k += pieces as u64;
                chains.push(Box::new(move |mu| {
                    let len = mu / pieces as f64;
                    anchors.iter().map(|&a| (a, a + len)).collect()
                }));
            }
        }
    }
    let mut sets = Vec::new();
    for e in -6..=0 {
        let mu = 10f64.powi(e);
        for chain in &chains {
            sets.push(TrialSet {
                intervals: chain(mu),
            });
        }
    }
    sets
}

/// Largest sampled ratio for one trial-set measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UiRow {
    pub measure: f64,
    pub max_ratio: f64,
    pub bound: f64,
    pub witness: (f64, f64),
    pub witness_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UiReport {
    pub p: u32,
    pub c_p: f64,
    pub rows: Vec<UiRow>,
    pub bounded: bool,
    pub decreasing: bool,
    pub holds: bool,
}

/// Ratio of `int_A z^{-alpha} b` to `(x+y)^{-alpha} (x^{-theta} + y^{-theta})`.
pub fn ui_ratio(spec: &DaughterSpec, alpha: f64, theta: f64, set: &TrialSet, x: f64, y: f64) -> f64 {
    let lhs: f64 = set
        .intervals
        .iter()
        .map(|&(a, b)| {
            if a <= 0.0 {
                spec.partial_moment_integral(-alpha, b.min(x + y), x, y)
                    .unwrap_or(f64::INFINITY)
            } else {
                spec.interval_integral(-alpha, a, b, x, y)
            }
        })
        .sum();
    lhs / ((x + y).powf(-alpha) * (x.powf(-theta) + y.powf(-theta)))
}

/// Empirical modulus of the uniform integrability bound on `trial_sets`.
/// Returns `None` when the family admits no constants for this `alpha`.
pub fn verify_uniform_integrability(
    spec: &DaughterSpec,
    alpha: f64,
    theta: f64,
    trial_sets: &[TrialSet],
) -> Option<UiReport> {
    let consts = daughter_constants(spec, alpha);
    let p = (1.0 / theta).round() as u32;
    let pf = p as f64;
    let nu = spec.nu();
    if !(pf * (nu + 1.0 - alpha) > 1.0) || consts.omega_c.is_none() {
        return None;
    }
    let c_p = (nu + 2.0) * ((pf - 1.0) / (pf * (nu + 1.0 - alpha) - 1.0)).powf((pf - 1.0) / pf);
    let points = halton_points(&SampleBox::square(1e-6, 1e4), 2000);

    // rows keyed by measure on a 1e-6 relative log scale, which absorbs the
    // rounding in interval endpoints
    let mut by_measure: BTreeMap<i64, UiRow> = BTreeMap::new();
    for (idx, set) in trial_sets.iter().enumerate() {
        let mu = set.measure();
        if !(mu > 0.0) {
            continue;
        }
        let key = (mu.ln() * 1e6).round() as i64;
        let entry = by_measure.entry(key).or_insert(UiRow {
            measure: mu,
            max_ratio: 0.0,
            bound: c_p * mu.powf(theta),
            witness: (f64::NAN, f64::NAN),
            witness_set: idx,
        });
        entry.bound = entry.bound.min(c_p * mu.powf(theta));
        for &(x, y) in &points {
            let r = ui_ratio(spec, alpha, theta, set, x, y);
            if r > entry.max_ratio {
                entry.max_ratio = r;
                entry.witness = (x, y);
                entry.witness_set = idx;
            }
        }
    }
    let rows: Vec<UiRow> = by_measure.into_values().collect();
    let bounded = rows
        .iter()
        .all(|r| r.max_ratio <= r.bound * (1.0 + SAMPLE_TOL));
    let decreasing = rows
        .windows(2)
        .all(|w| w[0].max_ratio <= w[1].max_ratio * (1.0 + SAMPLE_TOL));
    Some(UiReport {
        p,
        c_p,
        rows,
        bounded,
        decreasing,
        holds: bounded && decreasing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub status: Status,
    pub worst_residual: Option<f64>,
    pub witness: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl HypothesisCheck {
    fn from_worst(w: Worst) -> Self {
        let c = w.finish(SAMPLE_TOL);
        HypothesisCheck {
            status: if c.holds { Status::Pass } else { Status::Fail },
            worst_residual: Some(c.worst_residual),
            witness: c.witness,
            note: None,
        }
    }

    fn from_sampled(c: &crate::kernels::SampledCheck) -> Self {
        HypothesisCheck {
            status: if c.holds { Status::Pass } else { Status::Fail },
            worst_residual: c.worst_residual.is_finite().then_some(c.worst_residual),
            witness: c.witness,
            note: None,
        }
    }

    fn na(note: impl Into<String>) -> Self {
        HypothesisCheck {
            status: Status::NotApplicable,
            worst_residual: None,
            witness: None,
            note: Some(note.into()),
        }
    }

    fn fail(note: impl Into<String>) -> Self {
        HypothesisCheck {
            status: Status::Fail,
            worst_residual: None,
            witness: None,
            note: Some(note.into()),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Which weighted spaces the initial condition belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialMembership {
    pub minus_2alpha: bool,
    pub minus_theta: bool,
    pub zero: bool,
    pub two: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub alpha: f64,
    pub theta: Option<f64>,
    pub p: Option<u32>,
    pub omega_c: Option<f64>,
    pub beta_0: Option<f64>,
    pub beta_minus_theta: Option<f64>,
    pub beta_minus_2alpha: Option<f64>,
    #[serde(rename = "B_minus_alpha")]
    pub b_minus_alpha: Option<f64>,
    pub beta_prime: Option<f64>,
    /// Threshold on `E` over `(0,1)^2`; `None` when the `beta` it needs is
    /// unavailable.
    #[serde(rename = "E_min")]
    pub e_min: Option<f64>,
    /// Infimum of the configured `E` over `(0,1)^2`.
    pub e_inf: f64,
    pub checks: BTreeMap<String, HypothesisCheck>,
    pub applicable_results: Vec<String>,
    pub growth: GrowthClass,
    pub initial: InitialMembership,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self, id: &str) -> bool {
        self.checks.get(id).is_some_and(HypothesisCheck::passed)
    }

    pub fn applies(&self, result: &str) -> bool {
        self.applicable_results.iter().any(|r| r == result)
    }

    /// Uniqueness hypotheses, used to gate the contraction experiment.
    pub fn uniqueness_gate(&self) -> std::result::Result<(), String> {
        let mut missing = Vec::new();
        for id in ["p1", "p2", "p40", "p7a", "p500"] {
            if !self.passed(id) {
                missing.push(id.to_string());
            }
        }
        if !self.initial.two {
            missing.push("X₂".to_string());
        }
        if !self.initial.minus_2alpha {
            missing.push("X_{-2α}".to_string());
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(format!("{} unmet", missing.join("/")))
        }
    }
}

const DAUGHTER_SAMPLES: usize = 10_000;
const GROWTH_SAMPLES: usize = 20_000;

/// Evaluates every hypothesis for the scenario and lists the results whose
/// hypotheses all hold.
pub fn check_scenario(
    kernel: &KernelSpec,
    daughter: &DaughterSpec,
    prob: &ProbSpec,
    ic: &InitialCondition,
) -> HypothesisReport {
    let alpha = kernel.declared_alpha;
    let growth = classify_growth(kernel, &SampleBox::default(), GROWTH_SAMPLES);
    let consts = daughter_constants(daughter, alpha);
    let points = halton_points(&SampleBox::default(), DAUGHTER_SAMPLES);
    let mut checks: BTreeMap<String, HypothesisCheck> = BTreeMap::new();
    let mut notes = consts.notes.clone();

    checks.insert("p1".into(), HypothesisCheck::from_sampled(&growth.p1));
    checks.insert("p2".into(), HypothesisCheck::from_sampled(&growth.p2));
    checks.insert("p3".into(), HypothesisCheck::from_sampled(&growth.p3));
    checks.insert("p400".into(), HypothesisCheck::from_sampled(&growth.p400));
    if !growth.symmetric_nonnegative {
        notes.push("kernel failed symmetry or non-negativity on the sample".into());
    }

    // symmetry, support and mass identity of b
    let mut p40 = Worst::new();
    let mut symmetric = true;
    for &(x, y) in &points {
        let v = x + y;
        for z in [1e-3 * v, 0.3 * v, 0.5 * x.min(y), 0.99 * v] {
            if daughter.eval(z, x, y) != daughter.eval(z, y, x) {
                symmetric = false;
            }
        }
        if daughter.eval(v * (1.0 + 1e-9), x, y) != 0.0 {
            symmetric = false;
        }
        match daughter.moment_integral(1.0, x, y) {
            Ok(m1) => {
                // two-sided identity
                p40.record(m1, v, (x, y));
                p40.record(v, m1, (x, y));
            }
            Err(_) => p40.record(f64::INFINITY, v, (x, y)),
        }
    }
    let mut p40 = HypothesisCheck::from_worst(p40);
    if !symmetric {
        p40 = HypothesisCheck::fail("daughter distribution not symmetric or leaks past x+y");
    }
    checks.insert("p40".into(), p40);

    let theta = consts.theta;
    // uniform integrability
    let p5 = match theta {
        Some(th) => match verify_uniform_integrability(daughter, alpha, th, &default_trial_sets()) {
            Some(ui) => {
                let worst = ui
                    .rows
                    .iter()
                    .map(|r| (r.max_ratio - r.bound) / r.bound)
                    .fold(f64::NEG_INFINITY, f64::max);
                let row = ui
                    .rows
                    .iter()
                    .max_by(|a, b| (a.max_ratio / a.bound).total_cmp(&(b.max_ratio / b.bound)))
                    .expect("rows");
                HypothesisCheck {
                    status: if ui.holds { Status::Pass } else { Status::Fail },
                    worst_residual: Some(worst),
                    witness: Some(row.witness),
                    note: (!ui.decreasing).then(|| "sampled modulus not monotone in |A|".into()),
                }
            }
            None => HypothesisCheck::fail("no admissible integrability exponent"),
        },
        None => HypothesisCheck::fail(
            consts
                .notes
                .first()
                .cloned()
                .unwrap_or_else(|| "no admissible integrability exponent".into()),
        ),
    };
    checks.insert("p5".into(), p5);

    // small-volume moment bounds
    let sampled = |lhs: &dyn Fn(f64, f64) -> Result<f64>, rhs: &dyn Fn(f64, f64) -> f64| {
        let mut w = Worst::new();
        for &(x, y) in &points {
            let l = lhs(x, y).unwrap_or(f64::INFINITY);
            w.record(l, rhs(x, y), (x, y));
        }
        HypothesisCheck::from_worst(w)
    };

    let (p4a, p4, p6, paa4) = if alpha == 0.0 {
        let p4a = match consts.beta_0 {
            Some(b0) => sampled(&|x, y| daughter.moment_integral(0.0, x, y), &|_, _| b0),
            None => HypothesisCheck::fail("number of fragments is not integrable (nu <= -1)"),
        };
        let p4b = match (theta, consts.beta_minus_theta) {
            (Some(th), Some(bt)) if bt >= 2f64.powf(-th) => sampled(
                &|x, y| daughter.moment_integral(-th, x, y),
                &|x, y| bt / 2.0 * (x.powf(-th) + y.powf(-th)),
            ),
            _ => HypothesisCheck::fail("no admissible beta_{-theta}"),
        };
        let p4 = if p4a.passed() && p4b.passed() {
            p4b.clone()
        } else if !p4a.passed() {
            p4a.clone()
        } else {
            p4b
        };
        let paa4 = match (theta, consts.beta_prime) {
            (Some(th), Some(bp)) if bp >= 2.0 => match *daughter {
                DaughterSpec::PowerEach { nu } => {
                    // per-particle kernel (nu+2) z^nu / x^{nu+1} on (0, x)
                    let single = DaughterSpec::PowerTotal { nu };
                    sampled(
                        &|x, _| single.moment_integral(-th, x, 0.0),
                        &|x, _| bp / 2.0 * x.powf(-th),
                    )
                    .with_note("split form with per-particle mass identity")
                }
                _ => sampled(
                    &|x, y| daughter.moment_integral(-th, x, y),
                    &|x, y| bp / 2.0 * (x + y).powf(-th),
                ),
            },
            _ => HypothesisCheck::fail("no admissible beta'_{-theta}"),
        };
        (p4a, p4, HypothesisCheck::na("alpha = 0"), paa4)
    } else {
        let p6 = match (theta, consts.beta_minus_2alpha) {
            (Some(th), Some(b2)) if th <= alpha && b2 >= 1.0 => sampled(
                &|x, y| daughter.moment_integral(-2.0 * alpha, x, y),
                &|x, y| b2 * (x + y).powf(-2.0 * alpha),
            ),
            _ => HypothesisCheck::fail(
                consts
                    .notes
                    .first()
                    .cloned()
                    .unwrap_or_else(|| "no admissible beta_{-2 alpha}".into()),
            ),
        };
        (
            HypothesisCheck::na("alpha > 0"),
            HypothesisCheck::na("alpha > 0"),
            p6,
            HypothesisCheck::na("alpha > 0"),
        )
    };
    checks.insert("p4a".into(), p4a);
    checks.insert("p4".into(), p4);
    checks.insert("p6".into(), p6);
    checks.insert("paa4".into(), paa4);

    // coalescence probability
    let mut p7a = Worst::new();
    let mut prob_ok = true;
    for &(x, y) in &points {
        match (prob.eval(x, y), prob.eval(y, x)) {
            (Ok(e), Ok(es)) => {
                if e != es || !(0.0..=1.0).contains(&e) {
                    prob_ok = false;
                }
                p7a.record(e, 1.0, (x, y));
            }
            _ => prob_ok = false,
        }
    }
    let mut p7a = HypothesisCheck::from_worst(p7a);
    if !prob_ok {
        p7a = HypothesisCheck::fail("E not symmetric, outside [0,1], or undefined on the sample");
    }
    let e_min = consts
        .beta_minus_2alpha
        .and_then(|b| coalescence_threshold(b, alpha).ok());
    let e_inf = prob.inf_on_unit_square();
    let p7 = match e_min {
        Some(emin) if p7a.passed() => {
            let residual = (emin - e_inf) / emin.max(1e-300);
            HypothesisCheck {
                status: if e_inf >= emin { Status::Pass } else { Status::Fail },
                worst_residual: Some(if emin > 0.0 { residual } else { -e_inf }),
                witness: None,
                note: Some(format!("inf E on (0,1)^2 = {e_inf}, E_min = {emin}")),
            }
        }
        Some(_) => p7a.clone(),
        None => HypothesisCheck::fail("threshold unavailable without beta_{-2 alpha}"),
    };
    checks.insert("p7a".into(), p7a);
    checks.insert("p7".into(), p7);

    let p500 = match consts.b_minus_alpha {
        Some(b) if b > 1.0 => sampled(
            &|x, y| {
                let u = (x + y).min(1.0);
                daughter.partial_moment_integral(-alpha, u, x, y)
            },
            &|x, y| b * (x + y).min(1.0).powf(-alpha),
        ),
        _ => HypothesisCheck::fail("no admissible B_{-alpha}"),
    };
    checks.insert("p500".into(), p500);

    let initial = InitialMembership {
        minus_2alpha: ic.has_finite_moment(-2.0 * alpha),
        minus_theta: theta.is_some_and(|t| ic.has_finite_moment(-t)),
        zero: ic.has_finite_moment(0.0),
        two: ic.has_finite_moment(2.0),
    };

    let ok = |id: &str| checks.get(id).is_some_and(HypothesisCheck::passed);
    let mut applicable = Vec::new();
    if alpha > 0.0 {
        let base = ok("p1") && ok("p40") && ok("p5") && ok("p6") && ok("p7") && initial.minus_2alpha;
        if base && ok("p3") {
            applicable.push("Thm2.1a");
        }
        if base && ok("p2") {
            applicable.push("Thm2.1b");
            if initial.two {
                applicable.push("Thm2.1c");
            }
        }
    } else {
        let base = ok("p1") && ok("p40") && ok("p5") && ok("p4") && ok("p7") && initial.minus_theta;
        if base && ok("p3") {
            applicable.push("Thm2.2a");
        }
        if base && ok("p2") {
            applicable.push("Thm2.2b");
            if initial.two {
                applicable.push("Thm2.2c");
            }
        }
        let relaxed = ok("p1") && ok("p40") && ok("p5") && ok("p4a") && ok("p7") && ok("paa4") && initial.zero;
        if relaxed && ok("p3") {
            applicable.push("Thm2.3a");
        }
        if relaxed && ok("p2") {
            applicable.push("Thm2.3b");
            if initial.two {
                applicable.push("Thm2.3c");
            }
        }
        if ok("p400") && ok("p40") && ok("p5") && ok("p4") && ok("p7a") && initial.minus_theta {
            applicable.push("Thm2.6");
        }
    }
    let report_partial = HypothesisReport {
        alpha,
        theta,
        p: consts.p,
        omega_c: consts.omega_c,
        beta_0: consts.beta_0,
        beta_minus_theta: consts.beta_minus_theta,
        beta_minus_2alpha: consts.beta_minus_2alpha,
        b_minus_alpha: consts.b_minus_alpha,
        beta_prime: consts.beta_prime,
        e_min,
        e_inf,
        checks,
        applicable_results: Vec::new(),
        growth,
        initial,
        notes,
    };
    let mut applicable: Vec<String> = applicable.into_iter().map(String::from).collect();
    if report_partial.uniqueness_gate().is_ok() {
        applicable.push("Uniqueness".into());
    }
    HypothesisReport {
        applicable_results: applicable,
        ..report_partial
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        assert_eq!(coalescence_threshold(2.0, 0.0).unwrap(), 0.0);
        for nu in [-0.7, -0.2, 0.0, 0.5, 3.0] {
            let b = (nu + 2.0) / (nu + 1.0);
            let e = coalescence_threshold(b, 0.0).unwrap();
            assert!((e - (-nu).max(0.0)).abs() < 1e-12);
            let e2 = coalescence_threshold(2.0 * b, 0.0).unwrap();
            assert!((e2 - 2.0 / (nu + 3.0)).abs() < 1e-12);
        }
        assert!(coalescence_threshold(0.5, 0.0).is_err());
        assert!(coalescence_threshold(2.0, 0.5).is_err());
    }

    #[test]
    fn singular_threshold_two_routes() {
        let e = threshold_singular(0.0, -0.25).unwrap();
        let g = coalescence_threshold(4.0, 0.25).unwrap();
        assert!((e - g).abs() < 1e-12);
        assert!((e - (4.0 - 2f64.powf(1.5)) / 3.0).abs() < 1e-14);
        assert!((e - 0.3905).abs() < 1e-4);
        assert!(threshold_singular(0.0, -1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn constants_for_model_daughters() {
        let c = daughter_constants(&DaughterSpec::power_total(0.0).unwrap(), 0.0);
        assert_eq!(c.p, Some(4));
        assert_eq!(c.beta_0, Some(2.0));
        assert!((c.beta_minus_theta.unwrap() - 2.0 / 0.75).abs() < 1e-15);
        let c = daughter_constants(&DaughterSpec::power_total(0.0).unwrap(), 0.25);
        // p > max(4, 4/3)
        assert_eq!(c.p, Some(7));
        assert_eq!(c.beta_minus_2alpha, Some(4.0));
        let c = daughter_constants(&DaughterSpec::power_each(0.0).unwrap(), 0.25);
        assert!(c.theta.is_none());
        assert!(!c.notes.is_empty());
        let c = daughter_constants(&DaughterSpec::Uniform, 0.0);
        assert_eq!(c.b_minus_alpha, Some(2.0));
    }

    #[test]
    fn ui_small_interval_at_origin() {
        let b0 = DaughterSpec::power_total(0.0).unwrap();
        let set = TrialSet {
            intervals: vec![(0.0, 1e-4)],
        };
        // int_0^delta 2/(x+y) = 2 delta/(x+y)
        let (x, y) = (0.3, 0.9);
        let r = ui_ratio(&b0, 0.0, 0.25, &set, x, y);
        let want = 2e-4 / 1.2 / (x.powf(-0.25) + y.powf(-0.25));
        assert!((r - want).abs() < 1e-15);
        let empty = TrialSet { intervals: vec![] };
        assert_eq!(ui_ratio(&b0, 0.0, 0.25, &empty, x, y), 0.0);
    }

    #[test]
    fn ui_report_for_power_total() {
        let b = DaughterSpec::power_total(0.5).unwrap();
        let rep = verify_uniform_integrability(&b, 0.2, 1.0 / 8.0, &default_trial_sets()).unwrap();
        assert!(rep.bounded, "{:?}", rep.rows);
        assert!(rep.decreasing, "{:#?}", rep.rows);
        assert_eq!(rep.rows.len(), 7);
    }

    #[test]
    fn scenario_examples() {
        let ic = InitialCondition::exponential(1.0);
        let rep = check_scenario(
            &KernelSpec::sum_product(0.0, 1.0).unwrap(),
            &DaughterSpec::power_total(0.0).unwrap(),
            &ProbSpec::constant(0.5).unwrap(),
            &ic,
        );
        assert!(rep.passed("p2"));
        assert_eq!(rep.e_min, Some(0.0));
        assert!(rep.applies("Thm2.2b"), "{:?}", rep.applicable_results);
        assert!(rep.applies("Uniqueness"));

        let rep = check_scenario(
            &KernelSpec::sum_product(-0.25, 0.5).unwrap(),
            &DaughterSpec::power_each(0.0).unwrap(),
            &ProbSpec::constant(1.0).unwrap(),
            &ic,
        );
        assert_eq!(rep.checks["p6"].status, Status::Fail);
        assert!(rep.applicable_results.is_empty(), "{:?} {:?}", rep.applicable_results, rep.checks);

        let rep = check_scenario(
            &KernelSpec::additive(),
            &DaughterSpec::power_total(0.0).unwrap(),
            &ProbSpec::constant(0.0).unwrap(),
            &ic,
        );
        assert!(rep.passed("p400"));
        assert_eq!(rep.growth.k0, Some(1.0));
        assert!(rep.applies("Thm2.6"));
    }

    #[test]
    fn gate_names_missing_pieces() {
        let rep = check_scenario(
            &KernelSpec::product(),
            &DaughterSpec::Uniform,
            &ProbSpec::constant(1.0).unwrap(),
            &InitialCondition::PowerCutoff {
                p: 0.5,
                x_c: 1.0,
                mass: 1.0,
            },
        );
        let err = rep.uniqueness_gate().unwrap_err();
        assert!(err.contains("p2"), "{err}");
    }
}
