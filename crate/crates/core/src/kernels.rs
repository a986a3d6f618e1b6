//! Collision kernels, their truncation, and sampled certification of the
//! growth hypotheses used by the existence and uniqueness results.
//!
//! Every family carries declared constants (singularity exponent `alpha`,
//! growth constants `k1`, `k2`, `k0` and the sublinear majorant `r`) with
//! per-family defaults. [`classify_growth`] checks the inequalities against
//! those declared constants on a deterministic log-uniform sample; it never
//! searches for optimal constants.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{config, Result};
use crate::table::LogTable2d;

/// Closed-form or tabulated collision kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `(x^{1/3} + y^{1/3}) (x^{-1/3} + y^{-1/3})`.
    Smoluchowski,
    /// `x^zeta y^eta + x^eta y^zeta`.
    SumProduct { zeta: f64, eta: f64 },
    /// `(1+x)^eta (1+y)^eta / (x+y)^sigma`.
    BgRatio { sigma: f64, eta: f64 },
    /// `x y`.
    Product,
    /// `x + y`.
    Additive,
    /// `c`.
    Constant { c: f64 },
    /// Symmetric table on a log grid.
    Table(Arc<LogTable2d>),
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Smoluchowski => "smoluchowski",
            KernelFamily::SumProduct { .. } => "sum_product",
            KernelFamily::BgRatio { .. } => "bg_ratio",
            KernelFamily::Product => "product",
            KernelFamily::Additive => "additive",
            KernelFamily::Constant { .. } => "constant",
            KernelFamily::Table(_) => "custom_table",
        }
    }
}

/// Kernel family plus the constants it is declared to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub declared_alpha: f64,
    pub declared_k1: f64,
    /// Linear growth constant on `(1, inf)^2`, if the family claims one.
    pub declared_k2: Option<f64>,
    /// Exponent `q` of the majorant `r(x) = max{1, r_scale x^q}`.
    pub r_exponent: Option<f64>,
    pub r_scale: f64,
    /// Global linear bound `K <= k0 (x + y)`, if claimed.
    pub declared_k0: Option<f64>,
}

impl KernelSpec {
    /// Builds a spec with the family's default constants after validating
    /// the parameters.
    pub fn new(family: KernelFamily) -> Result<Self> {
        let mut spec = KernelSpec {
            family,
            declared_alpha: 0.0,
            declared_k1: 1.0,
            declared_k2: None,
            r_exponent: None,
            r_scale: 1.0,
            declared_k0: None,
        };
        match spec.family {
            KernelFamily::Smoluchowski => {
                spec.declared_alpha = 1.0 / 3.0;
                spec.declared_k1 = 4.0;
                spec.declared_k2 = Some(2.0);
            }
            KernelFamily::SumProduct { zeta, eta } => {
                if !(zeta > -0.5) || !(zeta <= eta) || !(eta <= 1.0) {
                    return Err(config(format!(
                        "kernel.zeta/kernel.eta: sum_product needs -1/2 < zeta <= eta <= 1, got zeta = {zeta}, eta = {eta}"
                    )));
                }
                spec.declared_alpha = (-zeta).max(0.0);
                spec.declared_k1 = 2.0;
                spec.declared_k2 = Some(2.0);
                if eta < 1.0 {
                    spec.r_exponent = Some(eta.max(0.0));
                    spec.r_scale = 2.0;
                }
                if zeta >= 0.0 && zeta + eta == 1.0 {
                    spec.declared_k0 = Some(1.0);
                }
            }
            KernelFamily::BgRatio { sigma, eta } => {
                if !(0.0..1.0).contains(&sigma) {
                    return Err(config(format!(
                        "kernel.sigma: bg_ratio needs sigma in [0, 1), got {sigma}"
                    )));
                }
                if !(eta >= 0.0) || !(eta < (2.0 + sigma) / 2.0) {
                    return Err(config(format!(
                        "kernel.eta: bg_ratio needs 0 <= eta < (2 + sigma)/2, got {eta}"
                    )));
                }
                spec.declared_alpha = sigma / 2.0;
                spec.declared_k1 = 4f64.powf(eta);
                spec.r_exponent = Some((2.0 * eta - sigma) / 2.0);
                spec.r_scale = 4f64.powf(eta);
            }
            KernelFamily::Product => {
                spec.declared_k1 = 1.0;
            }
            KernelFamily::Additive => {
                spec.declared_k1 = 2.0;
                spec.declared_k2 = Some(1.0);
                spec.declared_k0 = Some(1.0);
            }
            KernelFamily::Constant { c } => {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(config(format!(
                        "kernel.c: constant kernel needs a finite c >= 0, got {c}"
                    )));
                }
                spec.declared_k1 = c.max(f64::MIN_POSITIVE);
                spec.declared_k2 = Some(c / 2.0);
                spec.r_exponent = Some(0.0);
                spec.r_scale = c.max(1.0);
            }
            KernelFamily::Table(ref table) => {
                if !table.is_symmetric() {
                    return Err(config(
                        "kernel.table: custom kernel table must be symmetric on a shared axis",
                    ));
                }
                if table.min_value() < 0.0 {
                    return Err(config("kernel.table: kernel values must be non-negative"));
                }
                spec.declared_k1 = table.max_value().max(f64::MIN_POSITIVE);
            }
        }
        Ok(spec)
    }

    pub fn smoluchowski() -> Self {
        Self::new(KernelFamily::Smoluchowski).expect("valid")
    }

    pub fn sum_product(zeta: f64, eta: f64) -> Result<Self> {
        Self::new(KernelFamily::SumProduct { zeta, eta })
    }

    pub fn bg_ratio(sigma: f64, eta: f64) -> Result<Self> {
        Self::new(KernelFamily::BgRatio { sigma, eta })
    }

    pub fn product() -> Self {
        Self::new(KernelFamily::Product).expect("valid")
    }

    pub fn additive() -> Self {
        Self::new(KernelFamily::Additive).expect("valid")
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(KernelFamily::Constant { c })
    }

    /// Custom kernel read from a `x,y,K` CSV.
    pub fn from_table_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(KernelFamily::Table(Arc::new(LogTable2d::from_csv(path)?)))
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&alpha) {
            return Err(config(format!("kernel.alpha must lie in [0, 1/2), got {alpha}")));
        }
        self.declared_alpha = alpha;
        Ok(self)
    }

    pub fn with_k1(mut self, k1: f64) -> Result<Self> {
        if !(k1 > 0.0) {
            return Err(config(format!("kernel.k1 must be positive, got {k1}")));
        }
        self.declared_k1 = k1;
        Ok(self)
    }

    pub fn with_k2(mut self, k2: Option<f64>) -> Self {
        self.declared_k2 = k2;
        self
    }

    pub fn with_k0(mut self, k0: Option<f64>) -> Self {
        self.declared_k0 = k0;
        self
    }

    pub fn with_r(mut self, exponent: Option<f64>, scale: f64) -> Self {
        self.r_exponent = exponent;
        self.r_scale = scale;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.declared_alpha
    }

    /// Closed-form value `K(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        Ok(match self.family {
            KernelFamily::Smoluchowski => {
                let (a, b) = (x.cbrt(), y.cbrt());
                (a + b) * (1.0 / a + 1.0 / b)
            }
            KernelFamily::SumProduct { zeta, eta } => {
                x.powf(zeta) * y.powf(eta) + x.powf(eta) * y.powf(zeta)
            }
            KernelFamily::BgRatio { sigma, eta } => {
                (1.0 + x).powf(eta) * (1.0 + y).powf(eta) / (x + y).powf(sigma)
            }
            KernelFamily::Product => x * y,
            KernelFamily::Additive => x + y,
            KernelFamily::Constant { c } => c,
            KernelFamily::Table(ref t) => t.eval_symmetric(x, y)?,
        })
    }

    /// Majorant `r(x) = max{1, r_scale x^q}` when declared.
    pub fn r(&self, x: f64) -> Option<f64> {
        self.r_exponent
            .map(|q| (self.r_scale * x.powf(q)).max(1.0))
    }

    /// Right-hand side of the four-region small/large volume bound.
    pub fn p1_bound(&self, x: f64, y: f64) -> f64 {
        let a = self.declared_alpha;
        let w = |v: f64| if v < 1.0 { v.powf(-a) } else { v };
        self.declared_k1 * w(x) * w(y)
    }
}

/// Evaluates `K(x, y)`.
pub fn eval_kernel(spec: &KernelSpec, x: f64, y: f64) -> Result<f64> {
    spec.eval(x, y)
}

/// Kernel `min{n, K} 1_{x + y < n}`.
#[derive(Debug, Clone)]
pub struct TruncatedKernel<'a> {
    spec: &'a KernelSpec,
    n: f64,
}

impl TruncatedKernel<'_> {
    pub fn level(&self) -> f64 {
        self.n
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if x + y >= self.n {
            return Ok(0.0);
        }
        Ok(self.spec.eval(x, y)?.min(self.n))
    }
}

pub fn truncate_kernel(spec: &KernelSpec, n: f64) -> TruncatedKernel<'_> {
    TruncatedKernel { spec, n }
}

/// Log-uniform sampling rectangle `[x_lo, x_hi] x [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl SampleBox {
    pub fn square(lo: f64, hi: f64) -> Self {
        SampleBox {
            x: (lo, hi),
            y: (lo, hi),
        }
    }
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox::square(1e-6, 1e6)
    }
}

/// Radical inverse of `k` in `base`.
pub(crate) fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

/// Deterministic log-uniform points of a box (Halton sequence, bases 2 and 3).
pub fn halton_points(bx: &SampleBox, count: usize) -> Vec<(f64, f64)> {
    let lerp = |(lo, hi): (f64, f64), u: f64| lo * (hi / lo).powf(u);
    (1..=count as u64)
        .map(|k| (lerp(bx.x, radical_inverse(k, 2)), lerp(bx.y, radical_inverse(k, 3))))
        .collect()
}

/// Outcome of checking one inequality on a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledCheck {
    pub holds: bool,
    /// Largest `(lhs - rhs) / rhs` encountered; non-positive when the
    /// inequality holds everywhere.
    pub worst_residual: f64,
    pub witness: Option<(f64, f64)>,
    /// Points that fell inside the region where the inequality applies.
    pub points: usize,
}

impl SampledCheck {
    pub(crate) fn failed(reason_points: usize) -> Self {
        SampledCheck {
            holds: false,
            worst_residual: f64::INFINITY,
            witness: None,
            points: reason_points,
        }
    }
}

/// Tracks the worst relative violation of `lhs <= rhs`.
#[derive(Debug, Clone)]
pub(crate) struct Worst {
    residual: f64,
    witness: Option<(f64, f64)>,
    points: usize,
}

impl Worst {
    pub(crate) fn new() -> Self {
        Worst {
            residual: f64::NEG_INFINITY,
            witness: None,
            points: 0,
        }
    }

    pub(crate) fn record(&mut self, lhs: f64, rhs: f64, at: (f64, f64)) {
        self.points += 1;
        let r = if rhs > 0.0 {
            (lhs - rhs) / rhs
        } else if lhs <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if r > self.residual || r.is_nan() {
            self.residual = if r.is_nan() { f64::INFINITY } else { r };
            self.witness = Some(at);
        }
    }

    pub(crate) fn finish(self, tol: f64) -> SampledCheck {
        SampledCheck {
            holds: self.residual <= tol,
            worst_residual: if self.points == 0 { 0.0 } else { self.residual },
            witness: self.witness,
            points: self.points,
        }
    }
}

/// Relative tolerance for sampled inequality checks.
pub const SAMPLE_TOL: f64 = 1e-12;

/// Sampled verdicts on the kernel growth hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthClass {
    pub satisfies_p1: bool,
    pub alpha: f64,
    pub k1: f64,
    pub p1: SampledCheck,
    pub satisfies_p2: bool,
    pub k2: Option<f64>,
    pub p2: SampledCheck,
    pub satisfies_p3: bool,
    pub r_exponent: Option<f64>,
    pub r_scale: f64,
    pub p3: SampledCheck,
    pub satisfies_p400: bool,
    pub k0: Option<f64>,
    pub p400: SampledCheck,
    /// Non-negativity and exact symmetry on the sample.
    pub symmetric_nonnegative: bool,
}

/// Checks the declared constants of `spec` on `samples` Halton points of
/// `sample_box` (clipped to the table box for tabulated kernels).
pub fn classify_growth(spec: &KernelSpec, sample_box: &SampleBox, samples: usize) -> GrowthClass {
    let mut bx = *sample_box;
    if let KernelFamily::Table(ref t) = spec.family {
        let (lo, hi) = t.x_range();
        bx.x = (bx.x.0.max(lo), bx.x.1.min(hi));
        bx.y = (bx.y.0.max(lo), bx.y.1.min(hi));
    }
    let points = halton_points(&bx, samples);

    let mut sym_ok = true;
    let mut p1 = Worst::new();
    let mut p2 = Worst::new();
    let mut p3 = Worst::new();
    let mut p400 = Worst::new();
    let a = spec.declared_alpha;
    let alpha_ok = (0.0..0.5).contains(&a);

    for &(x, y) in &points {
        let (k, k_swap) = match (spec.eval(x, y), spec.eval(y, x)) {
            (Ok(k), Ok(ks)) => (k, ks),
            _ => {
                sym_ok = false;
                continue;
            }
        };
        if k != k_swap || !(k >= 0.0) {
            sym_ok = false;
        }
        p1.record(k, spec.p1_bound(x, y), (x, y));
        if x > 1.0 && y > 1.0 {
            if let Some(k2) = spec.declared_k2 {
                p2.record(k, k2 * (x + y), (x, y));
            }
        }
        if let Some(r) = spec.r_exponent.map(|_| |v: f64| spec.r(v).expect("declared")) {
            let rhs = match (x < 1.0, y < 1.0) {
                (true, true) => None,
                (true, false) => Some(x.powf(-a) * r(y)),
                (false, true) => Some(r(x) * y.powf(-a)),
                (false, false) => Some(r(x) * r(y)),
            };
            if let Some(rhs) = rhs {
                p3.record(k, rhs, (x, y));
            }
        }
        if let Some(k0) = spec.declared_k0 {
            p400.record(k, k0 * (x + y), (x, y));
        }
    }

    let p1 = p1.finish(SAMPLE_TOL);
    let p2 = match spec.declared_k2 {
        Some(_) => p2.finish(SAMPLE_TOL),
        None => SampledCheck::failed(0),
    };
    let p3 = match spec.r_exponent {
        Some(q) if q < 1.0 && spec.r_scale > 0.0 => p3.finish(SAMPLE_TOL),
        _ => SampledCheck::failed(0),
    };
    let p400 = match spec.declared_k0 {
        Some(_) => p400.finish(SAMPLE_TOL),
        None => SampledCheck::failed(0),
    };
    GrowthClass {
        satisfies_p1: alpha_ok && sym_ok && p1.holds,
        alpha: a,
        k1: spec.declared_k1,
        p1,
        satisfies_p2: sym_ok && p2.holds,
        k2: spec.declared_k2,
        p2,
        satisfies_p3: sym_ok && p3.holds,
        r_exponent: spec.r_exponent,
        r_scale: spec.r_scale,
        p3,
        satisfies_p400: sym_ok && p400.holds,
        k0: spec.declared_k0,
        p400,
        symmetric_nonnegative: sym_ok,
    }
}
