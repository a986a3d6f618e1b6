//! Convex weights that improve the integrability of a profile near zero.
//!
//! From an integrable `h` and `theta in (0, 1)` we build integers
//! `1 = j_0 < j_1 < ...`, the piecewise-quadratic `Phi_0` whose derivative
//! is linear between consecutive `j_m`, and `Phi(x) = x Phi_0(1/x) + 2/theta`.

use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::error::{config, data, domain, Result};
use crate::grid::{loglog_interp, read_xy_csv};

/// A tabulated non-negative profile with a power-law model `c x^p` below
/// the first node, fitted to the first two positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    x: Vec<f64>,
    h: Vec<f64>,
    tail_c: f64,
    tail_p: f64,
}

impl Profile {
    /// `|h|` at `x`, which must be positive and strictly increasing.
    pub fn new(x: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != h.len() {
            return Err(data("profile needs at least two (x, h) pairs of equal length"));
        }
        if x[0] <= 0.0 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(data("profile abscissae must be positive and strictly increasing"));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(data("profile values must be finite"));
        }
        let h: Vec<f64> = h.into_iter().map(f64::abs).collect();
        let (tail_c, tail_p) = if h[0] > 0.0 && h[1] > 0.0 {
            let p = (h[1] / h[0]).ln() / (x[1] / x[0]).ln();
            (h[0] / x[0].powf(p), p)
        } else {
            (0.0, 0.0)
        };
        if tail_c > 0.0 && tail_p <= -1.0 {
            return Err(data(format!(
                "profile is not integrable near 0: fitted tail exponent {tail_p:.4} <= -1"
            )));
        }
        Ok(Profile { x, h, tail_c, tail_p })
    }

    /// Tabulates `h` at `n` log-spaced points of `[lo, hi]`.
    pub fn from_fn(h: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) || n < 2 {
            return Err(config("profile range must satisfy 0 < lo < hi with at least two nodes"));
        }
        let step = (hi / lo).ln() / (n - 1) as f64;
        let x: Vec<f64> = (0..n).map(|k| lo * (step * k as f64).exp()).collect();
        let v = x.iter().map(|&t| h(t)).collect();
        Self::new(x, v)
    }

    /// Reads a headed two-column `x,h` CSV.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (x, h) = read_xy_csv(path.as_ref())?;
        Self::new(x, h)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn tail_model(&self) -> (f64, f64) {
        (self.tail_c, self.tail_p)
    }

    /// `|h(x)|`: the tail model below the table, interpolation inside, zero above.
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.x[0] {
            self.tail_c * t.powf(self.tail_p)
        } else {
            loglog_interp(&self.x, &self.h, t)
        }
    }

    fn segment_integral(&self, k: usize, lo: f64, hi: f64) -> f64 {
        let (x0, x1, f0, f1) = (self.x[k], self.x[k + 1], self.h[k], self.h[k + 1]);
        if f0 > 0.0 && f1 > 0.0 {
            let q = (f1 / f0).ln() / (x1 / x0).ln();
            let c = f0 / x0.powf(q);
            power_integral(c, q, lo, hi)
        } else {
            let s = (f1 - f0) / (x1 - x0);
            let at = |t: f64| f0 * t + 0.5 * s * (t - x0).powi(2) - f0 * x0;
            at(hi) - at(lo)
        }
    }

    /// `int_0^a |h|`.
    pub fn lower_integral(&self, a: f64) -> f64 {
        let x0 = self.x[0];
        let tail = power_integral(self.tail_c, self.tail_p, 0.0, a.min(x0));
        if a <= x0 {
            return tail;
        }
        let mut sum = tail;
        for k in 0..self.x.len() - 1 {
            let (lo, hi) = (self.x[k], self.x[k + 1].min(a));
            if hi <= lo {
                break;
            }
            sum += self.segment_integral(k, lo, hi);
        }
        sum
    }

    pub fn total(&self) -> f64 {
        self.lower_integral(self.x[self.x.len() - 1])
    }
}

/// `int_lo^hi c t^q dt` for `q > -1` (or `lo > 0`).
fn power_integral(c: f64, q: f64, lo: f64, hi: f64) -> f64 {
    if c == 0.0 || hi <= lo {
        return 0.0;
    }
    let e = q + 1.0;
    if lo == 0.0 {
        return c * hi.powf(e) / e;
    }
    let l = (hi / lo).ln();
    if e.abs() < 1e-14 {
        c * l
    } else {
        c * lo.powf(e) * (e * l).exp_m1() / e
    }
}

/// Smallest integer `j >= floor` with `int_0^{1/j} |h| <= cap`.
fn smallest_j(h: &Profile, floor: u64, cap: f64) -> Result<u64> {
    let ok = |j: u64| h.lower_integral(1.0 / j as f64) <= cap;
    if ok(floor) {
        return Ok(floor);
    }
    let mut hi = floor;
    while !ok(hi) {
        hi = hi
            .checked_mul(2)
            .filter(|v| *v < (1u64 << 62))
            .ok_or_else(|| data("profile tail integral does not decay near 0"))?;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `j_0 = 1` and, for `m >= 0`, the least `j_{m+1}` with
/// `j_{m+1} >= max{2 j_m, ceil(e^{m+1})}` and
/// `int_0^{1/j_{m+1}} |h| <= 1/(m+1)^2`.
pub fn build_j_sequence(h: &Profile, max_m: usize) -> Result<Vec<u64>> {
    if max_m < 2 {
        return Err(config("max_m must be at least 2"));
    }
    let mut j = vec![1u64];
    for m in 1..=max_m {
        let growth = (2 * j[m - 1]).max((m as f64).exp().ceil() as u64);
        let cap = 1.0 / (m * m) as f64;
        j.push(smallest_j(h, growth, cap)?);
    }
    Ok(j)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiConstruction {
    pub j_seq: Vec<u64>,
    pub theta: f64,
    /// `Phi_0(j_m)`.
    phi0_at: Vec<f64>,
    /// Continue the last linear piece of `Phi_0'` past `j_M` in `eval_phi0`.
    pub extrapolate: bool,
}

impl PhiConstruction {
    pub fn new(j_seq: Vec<u64>, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(config(format!("theta must lie in (0, 1), got {theta}")));
        }
        if j_seq.len() < 3 || j_seq[0] != 1 || j_seq.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config("j sequence must start at 1, increase strictly, and have at least three terms"));
        }
        let mut pc = PhiConstruction {
            j_seq,
            theta,
            phi0_at: Vec::new(),
            extrapolate: false,
        };
        let mut acc = vec![0.0];
        for m in 0..pc.j_seq.len() - 1 {
            let (a, b) = (pc.j_seq[m] as f64, pc.j_seq[m + 1] as f64);
            let lo = if m == 0 { 0.0 } else { a };
            let piece = if m == 0 {
                // the first piece starts at 0, not at j_0
                0.5 * b * b / pc.gap(0)
            } else {
                let (d_lo, d_hi) = (pc.derivative_on(m, lo), pc.derivative_on(m, b));
                0.5 * (d_lo + d_hi) * (b - lo)
            };
            let prev = if m == 0 { 0.0 } else { acc[m] };
            acc.push(prev + piece);
        }
        // acc[m] = Phi_0(j_m) for m >= 1; Phi_0(j_0) is not a breakpoint
        acc[0] = 0.5 / pc.gap(0);
        pc.phi0_at = acc;
        Ok(pc)
    }

    pub fn with_extrapolation(mut self, on: bool) -> Self {
        self.extrapolate = on;
        self
    }

    fn gap(&self, m: usize) -> f64 {
        (self.j_seq[m + 1] - self.j_seq[m]) as f64
    }

    /// `Phi_0'` from the formula of piece `m` (`m = 0` is `[0, j_1]`).
    fn derivative_on(&self, m: usize, xi: f64) -> f64 {
        if m == 0 {
            xi / self.gap(0)
        } else {
            (xi - self.j_seq[m] as f64) / self.gap(m) + m as f64 + 1.0 / self.gap(0)
        }
    }

    /// Piece containing `xi` (the last piece for `xi` past `j_M`).
    fn piece(&self, xi: f64) -> usize {
        let last = self.j_seq.len() - 2;
        if xi <= self.j_seq[1] as f64 {
            return 0;
        }
        match self.j_seq.binary_search_by(|j| (*j as f64).total_cmp(&xi)) {
            Ok(k) => (k - 1).min(last),
            Err(k) => (k - 1).min(last),
        }
    }

    /// Largest breakpoint `j_M`.
    pub fn last_breakpoint(&self) -> f64 {
        *self.j_seq.last().expect("non-empty") as f64
    }

    fn phi0_unchecked(&self, xi: f64) -> (f64, f64) {
        let m = self.piece(xi);
        let d = self.derivative_on(m, xi);
        if m == 0 {
            return (0.5 * xi * xi / self.gap(0), d);
        }
        let a = self.j_seq[m] as f64;
        let da = self.derivative_on(m, a);
        (self.phi0_at[m] + 0.5 * (da + d) * (xi - a), d)
    }

    /// `Phi_0''` on the interior of the piece containing `xi`.
    pub fn second_derivative(&self, xi: f64) -> f64 {
        1.0 / self.gap(self.piece(xi))
    }
}

/// `(Phi_0(xi), Phi_0'(xi))`.
pub fn eval_phi0(pc: &PhiConstruction, xi: f64) -> Result<(f64, f64)> {
    if !(xi >= 0.0) {
        return Err(domain(format!("Phi_0 needs xi >= 0, got {xi}")));
    }
    if xi > pc.last_breakpoint() && !pc.extrapolate {
        return Err(domain(format!(
            "xi = {xi:e} beyond the last breakpoint {:e}",
            pc.last_breakpoint()
        )));
    }
    Ok(pc.phi0_unchecked(xi))
}

/// `Phi(x) = x Phi_0(1/x) + 2/theta`, continuing the last piece of
/// `Phi_0'` below `x = 1/j_M`.
pub fn eval_phi(pc: &PhiConstruction, x: f64) -> f64 {
    x * pc.phi0_unchecked(1.0 / x).0 + 2.0 / pc.theta
}

/// Builds the sequence from `h` and assembles the construction.
pub fn build_construction(h: &Profile, theta: f64, max_m: usize) -> Result<PhiConstruction> {
    PhiConstruction::new(build_j_sequence(h, max_m)?, theta)
}

/// `((theta - 1) j_1 / (j_1 - 1), 2 (theta - 1))`: the first-piece lower
/// bound and the target it must exceed.
pub fn first_piece_bound(pc: &PhiConstruction) -> (f64, f64) {
    let j1 = pc.j_seq[1] as f64;
    ((pc.theta - 1.0) * j1 / (j1 - 1.0), 2.0 * (pc.theta - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralCheck {
    pub passed: bool,
    /// `int Phi |h|` over `[1/j_M, x_end]`.
    pub integral: f64,
    /// Same with twice the quadrature points per segment.
    pub refined: f64,
    pub relative_change: f64,
    /// `int_0^{1/j_M} |h|`, not covered by the quadrature.
    pub uncovered_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeCheck {
    pub passed: bool,
    /// Most negative margin found (scaled so that a pass is `>= -tol`).
    pub worst_margin: f64,
    pub witness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlvpReport {
    pub integrable: IntegralCheck,
    pub non_increasing: ShapeCheck,
    pub convex: ShapeCheck,
    pub theta_monotone: ShapeCheck,
    /// `x^theta Phi(x)` along `x = 10^-k` down to `1/j_M`.
    pub theta_limit: Vec<(f64, f64)>,
    pub theta_limit_ok: bool,
    pub derivative_inequality: ShapeCheck,
    pub integrated_inequality: ShapeCheck,
    pub first_piece: (f64, f64),
    pub passed: bool,
}

fn log_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|k| lo * (step * k as f64).exp()).collect()
}

fn shape(margins: impl Iterator<Item = (f64, f64)>, tol: f64) -> ShapeCheck {
    let mut worst = f64::INFINITY;
    let mut witness = f64::NAN;
    for (m, at) in margins {
        if m < worst {
            worst = m;
            witness = at;
        }
    }
    ShapeCheck {
        passed: worst >= -tol,
        worst_margin: worst,
        witness,
    }
}

fn phi_integral(pc: &PhiConstruction, h: &Profile, points: usize) -> f64 {
    let quad = GaussLegendre::new(NonZeroUsize::new(points).expect("nonzero"));
    let (x0, x_end) = h.range();
    let lo = 1.0 / pc.last_breakpoint();
    let mut nodes: Vec<f64> = h.x.iter().copied().filter(|&x| x > lo).collect();
    nodes.extend(pc.j_seq.iter().map(|&j| 1.0 / j as f64).filter(|&x| x > lo && x < x_end));
    if lo < x0 {
        nodes.push(lo);
        // resolve the tail model on a few decades per segment
        nodes.extend(log_points(lo, x0, ((x0 / lo).log10().ceil() as usize).max(2)));
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].ln(), w[1].ln());
            quad.integrate(a, b, |s| {
                let x = s.exp();
                eval_phi(pc, x) * h.eval(x) * x
            })
        })
        .sum()
}

/// Checks the construction on `samples` log-spaced points of the profile's
/// range and by quadrature on its tabulation.
pub fn verify_dlvp(pc: &PhiConstruction, h: &Profile, samples: usize) -> Result<DlvpReport> {
    if samples < 3 {
        return Err(config("verify_dlvp needs at least three samples"));
    }
    const TOL: f64 = 1e-12;
    let theta = pc.theta;
    let (x0, x_end) = h.range();
    let lo = x0.max(1.0 / pc.last_breakpoint());

    let integral = phi_integral(pc, h, 8);
    let refined = phi_integral(pc, h, 16);
    let relative_change = (refined - integral).abs() / refined.abs().max(f64::MIN_POSITIVE);
    let integrable = IntegralCheck {
        passed: integral.is_finite() && refined.is_finite() && relative_change <= 1e-2,
        integral,
        refined,
        relative_change,
        uncovered_mass: h.lower_integral(1.0 / pc.last_breakpoint()),
    };

    let xs = log_points(lo, x_end, samples);
    let phi: Vec<f64> = xs.iter().map(|&x| eval_phi(pc, x)).collect();
    let non_increasing = shape(
        (0..samples - 1).map(|k| ((phi[k] - phi[k + 1]) / phi[k].abs().max(1.0), xs[k])),
        TOL,
    );
    let slopes: Vec<f64> = (0..samples - 1)
        .map(|k| (phi[k + 1] - phi[k]) / (xs[k + 1] - xs[k]))
        .collect();
    let convex = shape(
        (0..slopes.len() - 1).map(|k| {
            let scale = slopes[k].abs().max(slopes[k + 1].abs()).max(1.0);
            ((slopes[k + 1] - slopes[k]) / scale, xs[k + 1])
        }),
        1e-9,
    );
    let big_theta: Vec<f64> = xs.iter().zip(&phi).map(|(x, p)| x.powf(theta) * p).collect();
    let theta_monotone = shape(
        (0..samples - 1).map(|k| ((big_theta[k + 1] - big_theta[k]) / (xs[k + 1] - xs[k]), xs[k])),
        TOL,
    );

    let floor = 1.0 / pc.last_breakpoint();
    let mut theta_limit = Vec::new();
    let mut x = 1.0;
    while x >= floor {
        theta_limit.push((x, x.powf(theta) * eval_phi(pc, x)));
        x *= 0.1;
    }
    // each decade must shrink the value by a fixed factor, so the sampled
    // sequence heads to zero rather than levelling off
    let theta_limit_ok = theta_limit.len() >= 2
        && theta_limit.windows(2).all(|w| w[1].1 >= 0.0 && w[1].1 <= 0.9 * w[0].1);

    // inequalities in xi: interiors of every piece plus a log sweep
    let j_last = pc.last_breakpoint();
    let mut xis: Vec<f64> = log_points(1e-3, j_last, samples);
    for m in 0..pc.j_seq.len() - 1 {
        let a = if m == 0 { 0.0 } else { pc.j_seq[m] as f64 };
        let b = pc.j_seq[m + 1] as f64;
        xis.extend([0.25, 0.5, 0.75].map(|s| a + s * (b - a)));
    }
    let derivative_inequality = shape(
        xis.iter().filter(|&&xi| !pc.j_seq[1..].iter().any(|&j| j as f64 == xi)).map(|&xi| {
            let (_, d) = pc.phi0_unchecked(xi);
            let lhs = theta * d - xi * pc.second_derivative(xi);
            ((lhs - 2.0 * (theta - 1.0)) / d.abs().max(1.0), xi)
        }),
        TOL,
    );
    let integrated_inequality = shape(
        xis.iter()
            .chain(pc.j_seq.iter().map(|j| *j as f64).collect::<Vec<_>>().iter())
            .map(|&xi| {
                let (p, d) = pc.phi0_unchecked(xi);
                let lhs = (1.0 + theta) * p - xi * d;
                let scale = p.abs().max(xi * d.abs()).max(1.0);
                ((lhs - 2.0 * (theta - 1.0) * xi) / scale, xi)
            }),
        TOL,
    );
    let first_piece = first_piece_bound(pc);
    let passed = integrable.passed
        && non_increasing.passed
        && convex.passed
        && theta_monotone.passed
        && theta_limit_ok
        && derivative_inequality.passed
        && integrated_inequality.passed
        && first_piece.0 >= first_piece.1;
    Ok(DlvpReport {
        integrable,
        non_increasing,
        convex,
        theta_monotone,
        theta_limit,
        theta_limit_ok,
        derivative_inequality,
        integrated_inequality,
        first_piece,
        passed,
    })
}
