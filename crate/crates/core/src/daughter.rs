//! Daughter distributions `b(z, x, y)` and coalescence probabilities `E(x, y)`.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{config, domain, Result};
use crate::table::LogTable2d;

/// Fragment distribution produced by a breakup collision of `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DaughterSpec {
    /// `(nu+2) z^nu / (x+y)^{nu+1}` on `(0, x+y)`.
    PowerTotal { nu: f64 },
    /// `(nu+2) z^nu / x^{nu+1}` on `(0, x)` plus the same term in `y`.
    PowerEach { nu: f64 },
    /// `2 / (x+y)` on `(0, x+y)`.
    Uniform,
}

impl DaughterSpec {
    pub fn power_total(nu: f64) -> Result<Self> {
        let spec = DaughterSpec::PowerTotal { nu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn power_each(nu: f64) -> Result<Self> {
        let spec = DaughterSpec::PowerEach { nu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DaughterSpec::PowerTotal { nu } | DaughterSpec::PowerEach { nu } => {
                if !(nu > -2.0) || !nu.is_finite() {
                    return Err(config(format!("daughter.nu must exceed -2, got {nu}")));
                }
                Ok(())
            }
            DaughterSpec::Uniform => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DaughterSpec::PowerTotal { .. } => "power_total",
            DaughterSpec::PowerEach { .. } => "power_each",
            DaughterSpec::Uniform => "uniform",
        }
    }

    /// Power of `z` in the density (`0` for the uniform family).
    pub fn nu(&self) -> f64 {
        match *self {
            DaughterSpec::PowerTotal { nu } | DaughterSpec::PowerEach { nu } => nu,
            DaughterSpec::Uniform => 0.0,
        }
    }

    /// Smallest order excluded from integrability at `z = 0`.
    pub fn moment_floor(&self) -> f64 {
        -(self.nu() + 1.0)
    }

    fn check_order(&self, m: f64) -> Result<()> {
        if m > self.moment_floor() {
            Ok(())
        } else {
            Err(domain(format!(
                "moment order m = {m} of the {} daughter requires m > -(nu+1) = {}",
                self.name(),
                self.moment_floor()
            )))
        }
    }

    /// `b(z, x, y)`.
    pub fn eval(&self, z: f64, x: f64, y: f64) -> f64 {
        let v = x + y;
        if !(z > 0.0) || z > v {
            return 0.0;
        }
        match *self {
            DaughterSpec::PowerTotal { nu } => (nu + 2.0) * z.powf(nu) / v.powf(nu + 1.0),
            DaughterSpec::PowerEach { nu } => {
                let term = |s: f64| {
                    if z < s {
                        (nu + 2.0) * z.powf(nu) / s.powf(nu + 1.0)
                    } else {
                        0.0
                    }
                };
                term(x) + term(y)
            }
            DaughterSpec::Uniform => 2.0 / v,
        }
    }

    /// `int_0^{x+y} z^m b(z, x, y) dz`.
    pub fn moment_integral(&self, m: f64, x: f64, y: f64) -> Result<f64> {
        self.partial_moment_integral(m, x + y, x, y)
    }

    /// `int_0^{upper} z^m b(z, x, y) dz` for `0 <= upper <= x + y`.
    pub fn partial_moment_integral(&self, m: f64, upper: f64, x: f64, y: f64) -> Result<f64> {
        self.check_order(m)?;
        let v = x + y;
        if !(upper >= 0.0) || upper > v * (1.0 + 4.0 * f64::EPSILON) {
            return Err(domain(format!(
                "partial moment upper limit {upper} outside [0, x+y = {v}]"
            )));
        }
        if upper == 0.0 {
            return Ok(0.0);
        }
        let upper = upper.min(v);
        Ok(match *self {
            DaughterSpec::PowerTotal { nu } => {
                (nu + 2.0) / (nu + 1.0 + m) * upper.powf(m) * (upper / v).powf(nu + 1.0)
            }
            DaughterSpec::PowerEach { nu } => {
                let term = |s: f64| {
                    let u = upper.min(s);
                    u.powf(m) * (u / s).powf(nu + 1.0)
                };
                (nu + 2.0) / (nu + 1.0 + m) * (term(x) + term(y))
            }
            DaughterSpec::Uniform => 2.0 / (m + 1.0) * upper.powf(m) * (upper / v),
        })
    }

    /// `int_lo^hi z^m b(z, x, y) dz` for `0 < lo <= hi`; finite for every real
    /// `m` because the interval stays away from zero.
    pub fn interval_integral(&self, m: f64, lo: f64, hi: f64, x: f64, y: f64) -> f64 {
        let v = x + y;
        let hi = hi.min(v);
        if !(hi > lo) {
            return 0.0;
        }
        // int_lo^hi z^{e-1} dz, stable near e = 0
        let power = |e: f64, lo: f64, hi: f64| -> f64 {
            let l = (hi / lo).ln();
            if e == 0.0 {
                l
            } else {
                lo.powf(e) * (e * l).exp_m1() / e
            }
        };
        match *self {
            DaughterSpec::PowerTotal { nu } => {
                (nu + 2.0) / v.powf(nu + 1.0) * power(nu + 1.0 + m, lo, hi)
            }
            DaughterSpec::PowerEach { nu } => {
                let term = |s: f64| {
                    let h = hi.min(s);
                    if h > lo {
                        (nu + 2.0) / s.powf(nu + 1.0) * power(nu + 1.0 + m, lo, h)
                    } else {
                        0.0
                    }
                };
                term(x) + term(y)
            }
            DaughterSpec::Uniform => 2.0 / v * power(m + 1.0, lo, hi),
        }
    }
}

/// Coalescence probability `E(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbSpec {
    Constant(f64),
    /// `e_small` on `(0, cut)^2`, `e_large` elsewhere.
    SmallVolumeFloor { e_small: f64, e_large: f64, cut: f64 },
    Table(Arc<LogTable2d>),
}

impl ProbSpec {
    pub fn constant(e: f64) -> Result<Self> {
        let spec = ProbSpec::Constant(e);
        spec.validate()?;
        Ok(spec)
    }

    pub fn small_volume_floor(e_small: f64, e_large: f64) -> Result<Self> {
        let spec = ProbSpec::SmallVolumeFloor {
            e_small,
            e_large,
            cut: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Probability table read from a `x,y,E` CSV.
    pub fn from_table_csv(path: impl AsRef<Path>) -> Result<Self> {
        let spec = ProbSpec::Table(Arc::new(LogTable2d::from_csv(path)?));
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, e: f64| {
            if (0.0..=1.0).contains(&e) {
                Ok(())
            } else {
                Err(config(format!("{name} must lie in [0, 1], got {e}")))
            }
        };
        match *self {
            ProbSpec::Constant(e) => unit("prob.value", e),
            ProbSpec::SmallVolumeFloor {
                e_small,
                e_large,
                cut,
            } => {
                unit("prob.e_small", e_small)?;
                unit("prob.e_large", e_large)?;
                if !(cut > 0.0) {
                    return Err(config(format!("prob.cut must be positive, got {cut}")));
                }
                Ok(())
            }
            ProbSpec::Table(ref t) => {
                if !t.is_symmetric() {
                    return Err(config("prob.table must be symmetric on a shared axis"));
                }
                unit("prob.table minimum", t.min_value())?;
                unit("prob.table maximum", t.max_value())
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        Ok(match *self {
            ProbSpec::Constant(e) => e,
            ProbSpec::SmallVolumeFloor {
                e_small,
                e_large,
                cut,
            } => {
                if x < cut && y < cut {
                    e_small
                } else {
                    e_large
                }
            }
            ProbSpec::Table(ref t) => t.eval_symmetric(x, y)?,
        })
    }

    /// Infimum of `E` over `(0, 1)^2` as far as the representation reveals it.
    pub fn inf_on_unit_square(&self) -> f64 {
        match *self {
            ProbSpec::Constant(e) => e,
            ProbSpec::SmallVolumeFloor {
                e_small,
                e_large,
                cut,
            } => {
                if cut >= 1.0 {
                    e_small
                } else {
                    e_small.min(e_large)
                }
            }
            ProbSpec::Table(ref t) => {
                let (lo, hi) = t.x_range();
                let hi = hi.min(1.0);
                if hi <= lo {
                    return t.min_value();
                }
                let mut inf = f64::INFINITY;
                let nodes: Vec<f64> = {
                    let n = 64;
                    (0..=n)
                        .map(|k| lo * (hi / lo).powf(k as f64 / n as f64))
                        .collect()
                };
                for &x in &nodes {
                    for &y in &nodes {
                        if let Ok(v) = t.eval(x, y) {
                            inf = inf.min(v);
                        }
                    }
                }
                if inf.is_finite() {
                    inf
                } else {
                    t.min_value()
                }
            }
        }
    }

    /// Whether `E` is identically one (no breakage anywhere).
    pub fn is_pure_coagulation(&self) -> bool {
        match *self {
            ProbSpec::Constant(e) => e == 1.0,
            ProbSpec::SmallVolumeFloor {
                e_small, e_large, ..
            } => e_small == 1.0 && e_large == 1.0,
            ProbSpec::Table(ref t) => t.min_value() == 1.0,
        }
    }
}

pub fn eval_b(spec: &DaughterSpec, z: f64, x: f64, y: f64) -> f64 {
    spec.eval(z, x, y)
}

pub fn moment_integral(spec: &DaughterSpec, m: f64, x: f64, y: f64) -> Result<f64> {
    spec.moment_integral(m, x, y)
}

pub fn partial_moment_integral(
    spec: &DaughterSpec,
    m: f64,
    upper: f64,
    x: f64,
    y: f64,
) -> Result<f64> {
    spec.partial_moment_integral(m, upper, x, y)
}

pub fn eval_e(spec: &ProbSpec, x: f64, y: f64) -> Result<f64> {
    spec.eval(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_examples() {
        assert_eq!(DaughterSpec::Uniform.eval(0.5, 1.0, 1.0), 1.0);
        let b1 = DaughterSpec::power_total(1.0).unwrap();
        for z in [0.5, 1.0, 3.9] {
            assert!((b1.eval(z, 2.0, 2.0) - 3.0 * z / 16.0).abs() < 1e-15);
        }
        assert_eq!(b1.eval(4.5, 2.0, 2.0), 0.0);
        let e0 = DaughterSpec::power_each(0.0).unwrap();
        assert_eq!(e0.eval(0.5, 1.0, 1.0), 4.0);
        assert_eq!(e0.eval(1.5, 1.0, 2.0), 1.0);
    }

    #[test]
    fn moment_constants() {
        let nu = -0.3;
        let bt = DaughterSpec::power_total(nu).unwrap();
        let be = DaughterSpec::power_each(nu).unwrap();
        assert!((bt.moment_integral(0.0, 0.7, 2.1).unwrap() - (nu + 2.0) / (nu + 1.0)).abs() < 1e-14);
        assert!(
            (be.moment_integral(0.0, 0.7, 2.1).unwrap() - 2.0 * (nu + 2.0) / (nu + 1.0)).abs()
                < 1e-14
        );
        for spec in [bt, be, DaughterSpec::Uniform] {
            let v = spec.moment_integral(1.0, 0.7, 2.1).unwrap();
            assert!((v - 2.8).abs() < 1e-14);
        }
    }

    #[test]
    fn order_outside_integrability() {
        let bt = DaughterSpec::power_total(0.0).unwrap();
        assert!(matches!(bt.moment_integral(-1.0, 1.0, 1.0), Err(crate::Error::Domain(_))));
        assert!(DaughterSpec::power_total(-2.0).is_err());
    }

    #[test]
    fn partial_examples() {
        let u = DaughterSpec::Uniform;
        assert!((u.partial_moment_integral(0.0, 1.0, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        let nu = 0.4;
        let a = 0.2;
        let bt = DaughterSpec::power_total(nu).unwrap();
        let (x, y) = (0.3, 0.4);
        let upper = 0.7f64.min(1.0);
        let got = bt.partial_moment_integral(-a, upper, x, y).unwrap();
        let want = (nu + 2.0) / (nu + 1.0 - a) * upper.powf(nu + 1.0 - a) / 0.7f64.powf(nu + 1.0);
        assert!((got - want).abs() < 1e-14 * want);
    }

    #[test]
    fn interval_matches_partial_differences() {
        let specs = [
            DaughterSpec::power_total(0.5).unwrap(),
            DaughterSpec::power_each(-0.5).unwrap(),
            DaughterSpec::Uniform,
        ];
        for spec in specs {
            for m in [0.0, 1.0, -0.25] {
                let (x, y) = (1.5, 0.5);
                let d = spec.partial_moment_integral(m, 1.7, x, y).unwrap()
                    - spec.partial_moment_integral(m, 0.3, x, y).unwrap();
                let i = spec.interval_integral(m, 0.3, 1.7, x, y);
                assert!((d - i).abs() < 1e-13 * i.abs().max(1.0));
            }
        }
        // log case: z^{-1} number density over an interval
        let b = DaughterSpec::power_total(-1.0).unwrap();
        let got = b.interval_integral(0.0, 0.5, 1.0, 1.0, 1.0);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn probability_forms() {
        assert_eq!(ProbSpec::constant(1.0).unwrap().eval(3.0, 4.0).unwrap(), 1.0);
        assert_eq!(ProbSpec::constant(0.0).unwrap().eval(3.0, 4.0).unwrap(), 0.0);
        let f = ProbSpec::small_volume_floor(0.7, 0.2).unwrap();
        assert_eq!(f.eval(0.5, 0.5).unwrap(), 0.7);
        assert_eq!(f.eval(2.0, 3.0).unwrap(), 0.2);
        assert_eq!(f.eval(0.5, 3.0).unwrap(), 0.2);
        assert!(ProbSpec::constant(1.5).is_err());
        assert!(ProbSpec::small_volume_floor(-0.1, 0.2).is_err());
    }
}
