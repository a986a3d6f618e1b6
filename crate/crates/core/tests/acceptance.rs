//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use breakcoag_core::diagnostics::{
    check_apriori_bounds, check_mass_conservation, contraction_experiment, detect_gelation, truncation_study,
    MomentSeries,
};
use breakcoag_core::dlvp::{build_construction, first_piece_bound, verify_dlvp, Profile};
use breakcoag_core::hypotheses::{
    coalescence_threshold, threshold_bg, threshold_power_each, threshold_power_total, threshold_singular, Status,
};
use breakcoag_core::solver::{weak_form_residual, Trajectory};
use breakcoag_core::*;
use common::tanh_sinh_split;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn base_grid() -> Grid {
    Grid::new(1e-4, 1e3, 300).unwrap()
}

fn scenario(kernel: KernelSpec, daughter: DaughterSpec, e: f64, t_end: f64) -> Scenario {
    Scenario::new(
        base_grid(),
        kernel,
        daughter,
        ProbSpec::constant(e).unwrap(),
        InitialCondition::exponential(1.0),
        StepControl::new(Method::Rk4, t_end).with_outputs_every(0.01),
    )
}

fn linear_growth(t_end: f64) -> Scenario {
    scenario(
        KernelSpec::sum_product(0.0, 1.0).unwrap(),
        DaughterSpec::power_total(0.0).unwrap(),
        0.5,
        t_end,
    )
}

fn at_time(series: &MomentSeries, m: f64, t: f64) -> f64 {
    let k = series
        .times
        .iter()
        .position(|&s| (s - t).abs() < 1e-9)
        .expect("output time present");
    series.order(m).unwrap()[k]
}

fn mass_conservation(run: &RunOutput) -> Outcome {
    let check = check_mass_conservation(&run.trajectory, 1e-8);
    outcome(check.passed, format!("max relative drift {:.3e} (tol 1e-8)", check.max_drift))
}

fn constant_kernel_oracle() -> Outcome {
    let sc = scenario(KernelSpec::constant(1.0).unwrap(), DaughterSpec::Uniform, 1.0, 4.0);
    let run = sc.run().unwrap();
    let series = MomentSeries::from_trajectory(&run.trajectory, &[0.0]);
    let mut worst: f64 = 0.0;
    for t in [1.0, 2.0, 4.0] {
        let want = 2.0 / (2.0 + t);
        worst = worst.max((at_time(&series, 0.0, t) - want).abs() / want);
    }
    outcome(worst <= 1e-2, format!("worst relative M0 error {worst:.3e} (tol 1e-2)"))
}

fn gelation_signature() -> Outcome {
    let sc = scenario(KernelSpec::product(), DaughterSpec::Uniform, 1.0, 1.0).with_mode(TruncationMode::Outflow);
    let run = sc.run().unwrap();
    let series = MomentSeries::from_trajectory(&run.trajectory, &[1.0, 2.0]);
    let mut worst: f64 = 0.0;
    for (k, &t) in series.times.iter().enumerate() {
        if t <= 0.4 + 1e-9 {
            let want = 2.0 / (1.0 - 2.0 * t);
            worst = worst.max((series.order(2.0).unwrap()[k] - want).abs() / want);
        }
    }
    let onset = detect_gelation(&series, 1e-3);
    let onset_ok = onset.is_some_and(|t| (0.45..=0.7).contains(&t));
    outcome(
        worst <= 0.05 && onset_ok,
        format!("worst M2 error {worst:.3e} on [0,0.4] (tol 5e-2), onset {onset:?} (want [0.45,0.7])"),
    )
}

fn threshold_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nu: f64 = rng.random_range(-0.99..3.0);
        // bounded kernel with b_nu: beta_0 = (nu+2)/(nu+1)
        let generic = coalescence_threshold((nu + 2.0) / (nu + 1.0), 0.0).unwrap();
        let hand = (-nu).max(0.0);
        worst = worst.max((generic - hand).abs());
        worst = worst.max((threshold_power_total(nu).unwrap() - hand).abs());

        // bounded kernel with the per-particle family: beta_0 = 2(nu+2)/(nu+1)
        let generic = coalescence_threshold(2.0 * (nu + 2.0) / (nu + 1.0), 0.0).unwrap();
        let hand = 2.0 / (nu + 3.0);
        worst = worst.max((generic - hand).abs());
        worst = worst.max((threshold_power_each(nu).unwrap() - hand).abs());

        let zeta: f64 = rng.random_range(-0.49..-0.01);
        let alpha = -zeta;
        let nu_s = 2.0 * alpha - 1.0 + rng.random_range(0.01..3.0);
        let generic = coalescence_threshold((nu_s + 2.0) / (nu_s + 1.0 - 2.0 * alpha), alpha).unwrap();
        let hand = ((nu_s + 2.0 - (nu_s + 1.0 + 2.0 * zeta) * 2f64.powf(1.0 - 2.0 * zeta)) / (1.0 - 2.0 * zeta)).max(0.0);
        worst = worst.max((generic - hand).abs());
        worst = worst.max((threshold_singular(nu_s, zeta).unwrap() - hand).abs());

        let sigma: f64 = rng.random_range(0.01..0.99);
        let nu_b = sigma - 1.0 + rng.random_range(0.01..3.0);
        let generic = coalescence_threshold((nu_b + 2.0) / (nu_b + 1.0 - sigma), sigma / 2.0).unwrap();
        let hand = ((nu_b + 2.0 - (nu_b + 1.0 - sigma) * 2f64.powf(1.0 + sigma)) / (1.0 + sigma)).max(0.0);
        worst = worst.max((generic - hand).abs());
        worst = worst.max((threshold_bg(nu_b, sigma).unwrap() - hand).abs());
    }
    outcome(worst <= 1e-12, format!("worst disagreement {worst:.3e} over 100 draws (tol 1e-12)"))
}

fn daughter_constants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_moment: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for _ in 0..1000 {
        let x = 10f64.powf(rng.random_range(-4.0..3.0));
        let y = 10f64.powf(rng.random_range(-4.0..3.0));
        let nu = rng.random_range(-0.55..2.0);
        for d in [
            DaughterSpec::Uniform,
            DaughterSpec::power_total(nu).unwrap(),
            DaughterSpec::power_each(nu).unwrap(),
        ] {
            for m in [-0.4, -0.25, 0.0, 0.5, 1.0] {
                let closed = d.moment_integral(m, x, y).unwrap();
                let quad = tanh_sinh_split(|z| z.powf(m) * d.eval(z, x, y), &[0.0, x.min(y), x.max(y), x + y], 1e-13);
                worst_moment = worst_moment.max((closed - quad).abs() / closed.abs());
            }
            let mass = d.moment_integral(1.0, x, y).unwrap();
            worst_mass = worst_mass.max((mass - (x + y)).abs() / (x + y));
        }
    }
    outcome(
        worst_moment <= 1e-8 && worst_mass <= 1e-12,
        format!("worst moment error {worst_moment:.3e} (tol 1e-8), mass identity {worst_mass:.3e} (tol 1e-12)"),
    )
}

fn apriori_bounds(c1: &Scenario, run: &RunOutput) -> Outcome {
    let report = c1.hypotheses();
    let series = MomentSeries::from_trajectory(&run.trajectory, &[0.0, 1.0, 2.0]);
    let rho = run.trajectory.initial().mass();
    let m0 = check_apriori_bounds(&series, &report, rho).m0;

    let e = threshold_singular(0.0, -0.25).unwrap();
    let singular = scenario(
        KernelSpec::sum_product(-0.25, 0.5).unwrap(),
        DaughterSpec::power_total(0.0).unwrap(),
        e,
        2.0,
    );
    let report_s = singular.hypotheses();
    let run_s = singular.run().unwrap();
    let series_s = MomentSeries::from_trajectory(&run_s.trajectory, &[-0.5, 0.0, 1.0, 2.0]);
    let small = check_apriori_bounds(&series_s, &report_s, run_s.trajectory.initial().mass()).m_minus_2alpha;
    outcome(
        m0.status == Status::Pass && small.status == Status::Pass,
        format!(
            "M0 {:?} worst ratio {:.3}; M_-1/2 {:?} worst ratio {:.3} (E = {e:.6})",
            m0.status, m0.worst_ratio, small.status, small.worst_ratio
        ),
    )
}

fn contraction() -> Outcome {
    let sc = scenario(KernelSpec::constant(1.0).unwrap(), DaughterSpec::Uniform, 0.5, 2.0);
    let g = InitialCondition::Exponential { lambda: 1.0, mass: 1.01 };
    match contraction_experiment(&sc, &sc.initial, &g) {
        Ok(r) => outcome(
            r.passed,
            format!("worst d/envelope {:.3e}, Lambda {:.3}, slack {}", r.worst_ratio, r.lambda, r.slack),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn weak_form(run: &RunOutput) -> Outcome {
    let traj: &Trajectory = &run.trajectory;
    let mut ok = true;
    let mut parts = Vec::new();
    for phi in [TestFunction::One, TestFunction::Identity, TestFunction::MinOne] {
        let r = weak_form_residual(&run.tables, traj, phi).unwrap();
        ok &= r.max_relative <= 1e-4;
        parts.push(format!("{} {:.2e}", phi.label(), r.max_relative));
    }
    let id = weak_form_residual(&run.tables, traj, TestFunction::Identity).unwrap();
    let mut agree: f64 = 0.0;
    for (k, row) in id.intervals.iter().enumerate() {
        let drift = traj.states[k + 1].mass() - traj.states[k].mass();
        agree = agree.max((row.absolute - drift.abs()).abs());
    }
    ok &= agree <= 1e-14;
    outcome(
        ok,
        format!("relative residuals [{}] (tol 1e-4); volume residual vs drift {agree:.2e} (tol 1e-14)", parts.join(", ")),
    )
}

fn dlvp_pipeline() -> Outcome {
    let h = Profile::from_fn(|x| (-x).exp(), 1e-8, 40.0, 2000).unwrap();
    let pc = build_construction(&h, 0.5, 8).unwrap();
    let report = verify_dlvp(&pc, &h, 400).unwrap();
    let (lhs, rhs) = first_piece_bound(&pc);
    let hand = pc.j_seq[1] == 3 && (lhs + 0.75).abs() < 1e-15 && (rhs + 1.0).abs() < 1e-15;
    let checks = report.integrable.passed
        && report.non_increasing.passed
        && report.convex.passed
        && report.theta_monotone.passed
        && report.theta_limit_ok
        && report.derivative_inequality.passed
        && report.integrated_inequality.passed;
    outcome(
        report.passed && checks && hand && lhs >= rhs,
        format!(
            "j = {:?}, integrability/shape/limit/inequality checks {}, first piece {lhs} >= {rhs}",
            pc.j_seq,
            if checks { "pass" } else { "fail" }
        ),
    )
}

fn truncation() -> Outcome {
    let study = truncation_study(&linear_growth(2.0), 2.0).unwrap();
    outcome(
        study.m0_change <= 1e-3 && study.m1_change <= 1e-3,
        format!(
            "x_max {} -> {:.0}: M0 change {:.2e}, M1 change {:.2e} (tol 1e-3)",
            study.x_max, study.extended_x_max, study.m0_change, study.m1_change
        ),
    )
}

fn main() -> ExitCode {
    let c1 = linear_growth(5.0);
    let start = Instant::now();
    let run = c1.run().expect("linear-growth run");
    println!("linear-growth trajectory ready in {:.1}s", start.elapsed().as_secs_f64());

    let criteria: Vec<Criterion> = vec![
        ("mass conservation", Box::new(|| mass_conservation(&run))),
        ("constant-kernel oracle", Box::new(constant_kernel_oracle)),
        ("gelation signature", Box::new(gelation_signature)),
        ("threshold formulas", Box::new(threshold_formulas)),
        ("daughter constants", Box::new(daughter_constants)),
        ("a priori bounds", Box::new(|| apriori_bounds(&c1, &run))),
        ("uniqueness contraction", Box::new(contraction)),
        ("weak-form residual", Box::new(|| weak_form(&run))),
        ("dlvp construction", Box::new(dlvp_pipeline)),
        ("truncation stability", Box::new(truncation)),
    ];
    let mut failures = 0;
    for (n, (name, run_one)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run_one();
        failures += usize::from(!o.passed);
        println!(
            "criterion {:>2} {name}: {} ({:.1}s) {}",
            n + 1,
            if o.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
