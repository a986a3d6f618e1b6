//! Checks run on computed trajectories: conservation, moment envelopes,
//! gelation onset, the weighted `L^1` contraction, time regularity, and
//! sweeps over the coalescence probability.

use serde::Serialize;

use crate::daughter::ProbSpec;
use crate::error::{config, Result};
use crate::grid::Grid;
use crate::hypotheses::{HypothesisReport, Status};
use crate::scenario::Scenario;
use crate::solver::Trajectory;

/// `M_m(t)` for a set of orders at the trajectory's output times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub orders: Vec<f64>,
    /// `values[k][t]` is the moment of order `orders[k]` at `times[t]`.
    pub values: Vec<Vec<f64>>,
}

impl MomentSeries {
    pub fn from_trajectory(trajectory: &Trajectory, orders: &[f64]) -> Self {
        let values = orders
            .iter()
            .map(|&m| trajectory.states.iter().map(|s| s.moment(m)).collect())
            .collect();
        MomentSeries {
            times: trajectory.times(),
            orders: orders.to_vec(),
            values,
        }
    }

    /// Values of order `m`, if recorded.
    pub fn order(&self, m: f64) -> Option<&[f64]> {
        self.orders
            .iter()
            .position(|&o| (o - m).abs() < 1e-12)
            .map(|k| self.values[k].as_slice())
    }

    /// CSV body with one column per order.
    pub fn to_csv_rows(&self) -> Vec<Vec<f64>> {
        (0..self.times.len())
            .map(|t| {
                std::iter::once(self.times[t])
                    .chain(self.values.iter().map(|v| v[t]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassCheck {
    pub passed: bool,
    pub tol: f64,
    /// `max_t |M_1(t) - M_1(0)| / M_1(0)` (zero for a zero state).
    pub max_drift: f64,
    pub drift: Vec<f64>,
}

pub fn check_mass_conservation(trajectory: &Trajectory, tol: f64) -> MassCheck {
    let m0 = trajectory.initial().mass();
    let drift: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| if m0 > 0.0 { (s.mass() - m0).abs() / m0 } else { 0.0 })
        .collect();
    let max_drift = drift.iter().copied().fold(0.0, f64::max);
    MassCheck {
        passed: max_drift <= tol,
        tol,
        max_drift,
        drift,
    }
}

/// One moment compared against an exponential envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub order: f64,
    pub status: Status,
    pub reason: Option<String>,
    pub envelope: Vec<f64>,
    /// `max_t M(t) / envelope(t)`.
    pub worst_ratio: f64,
    pub worst_time: f64,
}

impl EnvelopeCheck {
    fn not_applicable(order: f64, reason: impl Into<String>) -> Self {
        EnvelopeCheck {
            order,
            status: Status::NotApplicable,
            reason: Some(reason.into()),
            envelope: Vec::new(),
            worst_ratio: f64::NAN,
            worst_time: f64::NAN,
        }
    }

    fn compare(order: f64, times: &[f64], values: &[f64], envelope: Vec<f64>) -> Self {
        let mut worst_ratio = 0.0;
        let mut worst_time = times.first().copied().unwrap_or(0.0);
        let mut ok = true;
        for ((&t, &v), &e) in times.iter().zip(values).zip(&envelope) {
            // relative slack for round-off only
            ok &= v <= e * (1.0 + 1e-12);
            let r = if e > 0.0 { v / e } else if v > 0.0 { f64::INFINITY } else { 0.0 };
            if r > worst_ratio {
                worst_ratio = r;
                worst_time = t;
            }
        }
        EnvelopeCheck {
            order,
            status: if ok { Status::Pass } else { Status::Fail },
            reason: None,
            envelope,
            worst_ratio,
            worst_time,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub rho: f64,
    pub m0: EnvelopeCheck,
    pub m_minus_2alpha: EnvelopeCheck,
    pub m2: EnvelopeCheck,
}

/// `(M(0) + rho) e^{k1 beta rho t}` at each time.
fn small_moment_envelope(times: &[f64], m_init: f64, rho: f64, k1: f64, beta: f64) -> Vec<f64> {
    times
        .iter()
        .map(|&t| (m_init + rho) * (k1 * beta * rho * t).exp())
        .collect()
}

/// Checks the small-size moment envelopes and the second-moment envelope
/// at every output time.
///
/// The `M_0` and `M_{-2 alpha}` envelopes need `E >= E_min` on `(0,1)^2`
/// and are marked not applicable otherwise. The `M_2` envelope integrates
/// `dM_2/dt <= 2 k1 A^2 + 2 (2 k1 A + k2 rho) M_2` with `A` the bound on
/// `M_{1-alpha}` and needs the sublinear growth bound and `f^in in X_2`.
pub fn check_apriori_bounds(series: &MomentSeries, report: &HypothesisReport, rho: f64) -> AprioriReport {
    let alpha = report.alpha;
    let k1 = report.growth.k1;
    let times = &series.times;
    let threshold_ok = match report.e_min {
        Some(e_min) => report.e_inf >= e_min * (1.0 - 1e-12),
        None => false,
    };
    let gate = |order: f64, beta: Option<f64>, name: &str| -> EnvelopeCheck {
        let Some(values) = series.order(order) else {
            return EnvelopeCheck::not_applicable(order, format!("order {order} not recorded"));
        };
        if !report.growth.satisfies_p1 {
            return EnvelopeCheck::not_applicable(order, "kernel growth bound p1 not satisfied");
        }
        if !threshold_ok {
            return EnvelopeCheck::not_applicable(order, "E below the coalescence threshold");
        }
        let Some(beta) = beta else {
            return EnvelopeCheck::not_applicable(order, format!("{name} unavailable"));
        };
        let env = small_moment_envelope(times, values[0], rho, k1, beta);
        EnvelopeCheck::compare(order, times, values, env)
    };
    let m0 = gate(0.0, report.beta_0, "beta_0");
    let m_minus_2alpha = gate(-2.0 * alpha, report.beta_minus_2alpha, "beta_-2alpha");

    let m2 = (|| {
        let Some(values) = series.order(2.0) else {
            return EnvelopeCheck::not_applicable(2.0, "order 2 not recorded");
        };
        let Some(k2) = report.growth.k2.filter(|_| report.growth.satisfies_p2) else {
            return EnvelopeCheck::not_applicable(2.0, "kernel growth bound p2 not satisfied");
        };
        if !report.initial.two {
            return EnvelopeCheck::not_applicable(2.0, "initial condition not in X_2");
        }
        let a_bound: Box<dyn Fn(f64) -> Option<f64>> = if alpha == 0.0 {
            Box::new(|_| Some(rho))
        } else {
            let (Some(beta), Some(init)) = (report.beta_minus_2alpha, series.order(-2.0 * alpha)) else {
                return EnvelopeCheck::not_applicable(2.0, "M_-2alpha envelope unavailable");
            };
            if !threshold_ok {
                return EnvelopeCheck::not_applicable(2.0, "E below the coalescence threshold");
            }
            let c0 = init[0];
            Box::new(move |t| {
                let c1 = (c0 + rho) * (k1 * beta * rho * t).exp();
                Some(rho.powf((1.0 + alpha) / (1.0 + 2.0 * alpha)) * c1.powf(alpha / (1.0 + 2.0 * alpha)))
            })
        };
        let env: Vec<f64> = times
            .iter()
            .map(|&t| {
                let a = a_bound(t).unwrap_or(f64::INFINITY);
                let src = 2.0 * k1 * a * a;
                let rate = 2.0 * (2.0 * k1 * a + k2 * rho);
                (values[0] + src / rate) * (rate * t).exp() - src / rate
            })
            .collect();
        EnvelopeCheck::compare(2.0, times, values, env)
    })();

    AprioriReport {
        rho,
        m0,
        m_minus_2alpha,
        m2,
    }
}

/// First output time from which the relative mass loss exceeds `threshold`
/// at three consecutive outputs.
pub fn detect_gelation(series: &MomentSeries, threshold: f64) -> Option<f64> {
    let m1 = series.order(1.0)?;
    let m_init = *m1.first()?;
    if !(m_init > 0.0) {
        return None;
    }
    let lost: Vec<bool> = m1.iter().map(|m| (m_init - m) / m_init > threshold).collect();
    (0..lost.len().saturating_sub(2))
        .find(|&k| lost[k] && lost[k + 1] && lost[k + 2])
        .map(|k| series.times[k])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionResult {
    pub times: Vec<f64>,
    /// `sum_i w(c_i) |f_i - g_i| dx_i` with `w(x) = max{x^-alpha, x}`.
    pub distance: Vec<f64>,
    /// `d(0) e^{Lambda t}`.
    pub envelope: Vec<f64>,
    pub lambda: f64,
    /// Largest `M_-2alpha + M_2` of both runs combined over the outputs.
    pub mass_bound: f64,
    pub slack: f64,
    /// `max_t d(t) / envelope(t)` over times with a positive envelope.
    pub worst_ratio: f64,
    pub passed: bool,
}

/// `sum_i w(c_i) |f_i - g_i| dx_i` with `w(x) = max{x^-alpha, x}`.
pub fn weighted_distance(grid: &Grid, f: &[f64], g: &[f64], alpha: f64) -> f64 {
    grid.centers()
        .iter()
        .zip(grid.widths())
        .zip(f.iter().zip(g))
        .map(|((&c, &dx), (a, b))| c.powf(-alpha).max(c) * (a - b).abs() * dx)
        .sum()
}

/// Runs `scenario` from `ic_f` and `ic_g` and compares their weighted
/// distance with the Gronwall envelope of the uniqueness estimate.
pub fn contraction_experiment(
    scenario: &Scenario,
    ic_f: &crate::grid::InitialCondition,
    ic_g: &crate::grid::InitialCondition,
) -> Result<ContractionResult> {
    const SLACK: f64 = 0.05;
    let report = scenario.clone().with_initial(ic_f.clone()).hypotheses();
    report.uniqueness_gate().map_err(config)?;
    let report_g = scenario.clone().with_initial(ic_g.clone()).hypotheses();
    report_g.uniqueness_gate().map_err(config)?;
    let b = report
        .b_minus_alpha
        .ok_or_else(|| config("B_-alpha unavailable for this daughter distribution"))?;
    let alpha = report.alpha;
    let k1 = report.growth.k1;

    let tables = scenario.tables()?;
    let sf = crate::grid::sample_initial(ic_f, &scenario.grid)?;
    let sg = crate::grid::sample_initial(ic_g, &scenario.grid)?;
    let tf = scenario.run_from(&tables, &sf)?;
    let tg = scenario.run_from(&tables, &sg)?;

    let mass_bound = tf
        .states
        .iter()
        .zip(&tg.states)
        .map(|(a, b)| a.moment(-2.0 * alpha) + b.moment(-2.0 * alpha) + a.moment(2.0) + b.moment(2.0))
        .fold(0.0, f64::max);
    let lambda = k1 * (1.0 + 2f64.powf(2.0 + alpha) + 2.0 * b) * mass_bound;
    let times = tf.times();
    let distance: Vec<f64> = tf
        .states
        .iter()
        .zip(&tg.states)
        .map(|(a, b)| weighted_distance(&scenario.grid, a.density(), b.density(), alpha))
        .collect();
    let envelope: Vec<f64> = times.iter().map(|&t| distance[0] * (lambda * t).exp()).collect();
    let mut worst_ratio: f64 = 0.0;
    let mut passed = true;
    for (d, e) in distance.iter().zip(&envelope) {
        passed &= *d <= e * (1.0 + SLACK);
        if *e > 0.0 {
            worst_ratio = worst_ratio.max(d / e);
        }
    }
    Ok(ContractionResult {
        times,
        distance,
        envelope,
        lambda,
        mass_bound,
        slack: SLACK,
        worst_ratio,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equicontinuity {
    /// `max` over adjacent outputs of `int x^-alpha |f(t) - f(s)| / |t - s|`.
    pub estimate: f64,
    pub interval: (f64, f64),
    /// `k1 (2 + beta_-2alpha) (C + rho)^2` with `C` the largest measured
    /// `M_-2alpha` or `M_-alpha`; `None` when a constant is unavailable.
    pub constant: Option<f64>,
}

impl Equicontinuity {
    pub fn within_constant(&self) -> Option<bool> {
        self.constant.map(|c| self.estimate <= c)
    }
}

pub fn equicontinuity_modulus(trajectory: &Trajectory, alpha: f64) -> Result<f64> {
    Ok(equicontinuity_estimate(trajectory, alpha)?.0)
}

fn equicontinuity_estimate(trajectory: &Trajectory, alpha: f64) -> Result<(f64, (f64, f64))> {
    if trajectory.states.len() < 3 {
        return Err(config("equicontinuity needs at least three output times"));
    }
    let grid = &trajectory.grid;
    let mut best = (0.0, (0.0, 0.0));
    for w in trajectory.states.windows(2) {
        let (s, t) = (&w[0], &w[1]);
        let num: f64 = grid
            .centers()
            .iter()
            .zip(grid.widths())
            .zip(s.density().iter().zip(t.density()))
            .map(|((&c, &dx), (a, b))| c.powf(-alpha) * (a - b).abs() * dx)
            .sum();
        let q = num / (t.time() - s.time());
        if q > best.0 {
            best = (q, (s.time(), t.time()));
        }
    }
    Ok(best)
}

/// Lipschitz estimate in time together with the assembled constant.
pub fn equicontinuity_check(trajectory: &Trajectory, report: &HypothesisReport) -> Result<Equicontinuity> {
    let alpha = report.alpha;
    let (estimate, interval) = equicontinuity_estimate(trajectory, alpha)?;
    let rho = trajectory.initial().mass();
    let c = trajectory
        .states
        .iter()
        .map(|s| s.moment(-2.0 * alpha).max(s.moment(-alpha)))
        .fold(0.0, f64::max);
    let constant = report
        .beta_minus_2alpha
        .filter(|_| report.growth.satisfies_p1)
        .map(|beta| report.growth.k1 * (2.0 + beta) * (c + rho).powi(2));
    Ok(Equicontinuity {
        estimate,
        interval,
        constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub e: f64,
    pub mass_drift: f64,
    /// `max_t M_-2alpha(t) / M_-2alpha(0)`.
    pub m_minus_2alpha_growth: f64,
    /// Largest breakage collision rate `1/2 sum (1-E) K f f dx dx` seen.
    pub breakage_rate: f64,
    pub apriori_m0: Status,
    pub apriori_m_minus_2alpha: Status,
}

/// Reruns `template` with `E` set to each constant and tabulates the
/// conservation and small-size diagnostics. Nothing is asserted.
pub fn e_sweep(template: &Scenario, e_values: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(e_values.len());
    for &e in e_values {
        let scenario = template.clone().with_prob(ProbSpec::constant(e)?);
        let run = scenario.run()?;
        let report = scenario.hypotheses();
        let alpha = report.alpha;
        let traj = &run.trajectory;
        let series = MomentSeries::from_trajectory(traj, &[-2.0 * alpha, 0.0, 1.0, 2.0]);
        let rho = traj.initial().mass();
        let apriori = check_apriori_bounds(&series, &report, rho);
        let small = series.order(-2.0 * alpha).unwrap_or(&[]);
        let growth = match small.first() {
            Some(&s0) if s0 > 0.0 => small.iter().map(|s| s / s0).fold(0.0, f64::max),
            _ => 0.0,
        };
        let n = run.tables.cell_count();
        let dx = scenario.grid.widths();
        let breakage_rate = traj
            .states
            .iter()
            .map(|s| {
                let f = s.density();
                let mut sum = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        sum += (1.0 - run.tables.prob(i, j)) * run.tables.kernel(i, j) * f[i] * f[j] * dx[i] * dx[j];
                    }
                }
                0.5 * sum
            })
            .fold(0.0, f64::max);
        rows.push(SweepRow {
            e,
            mass_drift: check_mass_conservation(traj, 0.0).max_drift,
            m_minus_2alpha_growth: growth,
            breakage_rate,
            apriori_m0: apriori.m0.status,
            apriori_m_minus_2alpha: apriori.m_minus_2alpha.status,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationStudy {
    pub x_max: f64,
    pub extended_x_max: f64,
    pub times: Vec<f64>,
    /// `max_t |M_0 - M_0'| / M_0` between the two grids.
    pub m0_change: f64,
    pub m1_change: f64,
}

/// Reruns `scenario` on the grid extended to `factor * x_max` (same cells
/// below the old `x_max`) and reports the relative change of `M_0`, `M_1`.
pub fn truncation_study(scenario: &Scenario, factor: f64) -> Result<TruncationStudy> {
    let base = scenario.run()?;
    let extended = scenario.grid.extended_to(factor * scenario.grid.x_max())?;
    let wide = scenario.clone().with_grid(extended);
    let other = wide.run()?;
    let mut m0_change: f64 = 0.0;
    let mut m1_change: f64 = 0.0;
    for (a, b) in base.trajectory.states.iter().zip(&other.trajectory.states) {
        let (a0, b0) = (a.moment(0.0), b.moment(0.0));
        let (a1, b1) = (a.mass(), b.mass());
        if a0 > 0.0 {
            m0_change = m0_change.max((a0 - b0).abs() / a0);
        }
        if a1 > 0.0 {
            m1_change = m1_change.max((a1 - b1).abs() / a1);
        }
    }
    Ok(TruncationStudy {
        x_max: scenario.grid.x_max(),
        extended_x_max: wide.grid.x_max(),
        times: base.trajectory.times(),
        m0_change,
        m1_change,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::daughter::DaughterSpec;
    use crate::grid::{InitialCondition, State};
    use crate::kernels::KernelSpec;
    use crate::solver::{Method, StepControl, StepStats};

    fn zero_trajectory() -> Trajectory {
        let grid = Arc::new(Grid::new(1e-2, 10.0, 12).unwrap());
        let states = (0..4).map(|k| State::zero(grid.clone()).with_time(k as f64)).collect();
        Trajectory {
            grid,
            states,
            stats: StepStats::default(),
        }
    }

    #[test]
    fn zero_state_is_trivial() {
        let t = zero_trajectory();
        assert_eq!(check_mass_conservation(&t, 1e-8).max_drift, 0.0);
        let s = MomentSeries::from_trajectory(&t, &[0.0, 1.0]);
        assert_eq!(detect_gelation(&s, 1e-3), None);
        assert_eq!(equicontinuity_modulus(&t, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn gelation_needs_persistence() {
        let s = MomentSeries {
            times: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            orders: vec![1.0],
            values: vec![vec![1.0, 0.99, 1.0, 0.99, 0.98, 0.97, 0.96]],
        };
        assert_eq!(detect_gelation(&s, 1e-3), Some(3.0));
        assert_eq!(detect_gelation(&s, 0.5), None);
    }

    #[test]
    fn envelope_compare_flags_excess() {
        let c = EnvelopeCheck::compare(0.0, &[0.0, 1.0], &[1.0, 3.0], vec![2.0, 2.5]);
        assert_eq!(c.status, Status::Fail);
        assert!((c.worst_ratio - 1.2).abs() < 1e-15);
        assert_eq!(c.worst_time, 1.0);
    }

    #[test]
    fn identical_runs_have_zero_distance() {
        let grid = Grid::new(1e-3, 1e2, 40).unwrap();
        let sc = Scenario::new(
            grid,
            KernelSpec::constant(1.0).unwrap(),
            DaughterSpec::Uniform,
            ProbSpec::constant(0.5).unwrap(),
            InitialCondition::exponential(1.0),
            StepControl::new(Method::Rk4, 0.5).with_outputs_every(0.25),
        );
        let ic = InitialCondition::exponential(1.0);
        let r = contraction_experiment(&sc, &ic, &ic).unwrap();
        assert!(r.distance.iter().all(|d| *d == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn contraction_gate_rejects_superlinear_kernel() {
        let grid = Grid::new(1e-3, 1e2, 40).unwrap();
        let sc = Scenario::new(
            grid,
            KernelSpec::product(),
            DaughterSpec::Uniform,
            ProbSpec::constant(1.0).unwrap(),
            InitialCondition::exponential(1.0),
            StepControl::new(Method::Rk4, 0.5),
        );
        let ic = InitialCondition::exponential(1.0);
        let err = contraction_experiment(&sc, &ic, &ic).unwrap_err();
        assert!(err.to_string().contains("unmet"), "{err}");
    }

    #[test]
    fn moment_series_lookup() {
        let t = zero_trajectory();
        let s = MomentSeries::from_trajectory(&t, &[-0.5, 2.0]);
        assert!(s.order(-0.5).is_some());
        assert!(s.order(1.0).is_none());
        assert_eq!(s.to_csv_rows()[1].len(), 3);
    }
}
