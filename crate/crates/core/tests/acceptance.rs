//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use splitvi_core::harness::{
    run_convergence, run_property_suite, run_switching_study, ConvergenceReport, Experiment, ExperimentConfig,
    PropertyOptions,
};
use splitvi_core::operator::apply_slice;
use splitvi_core::reference::mc_expectation;
use splitvi_core::scheme::solve;
use splitvi_core::{
    effective_control_bound, frozen_expectation, legendre, GridFunction, HamiltonianKind, OperatorConfig, ProblemSpec,
    QuadratureRule, SpatialGrid,
};

const SMOOTH: &str = include_str!("../../../configs/smooth.toml");
const OBSTACLE: &str = include_str!("../../../configs/obstacle.toml");
const KINKED: &str = include_str!("../../../configs/kinked.toml");
const SWITCHING: &str = include_str!("../../../configs/switching.toml");

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn experiment(text: &str) -> Experiment {
    ExperimentConfig::from_toml_str(text)
        .and_then(|c| c.build())
        .expect("shipped configs build")
}

fn timed(
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    f: impl FnOnce() -> (bool, String),
) -> Line {
    let start = Instant::now();
    let (mut passed, mut detail) = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
        }
    }
    Line {
        id,
        name,
        passed,
        detail,
        elapsed,
    }
}

fn verdict_summary(report: &ConvergenceReport, names: &[&str]) -> (bool, String) {
    let picked: Vec<_> = report
        .verdicts
        .iter()
        .filter(|v| names.iter().any(|n| v.name.starts_with(n)))
        .collect();
    assert_eq!(picked.len(), names.len(), "missing verdicts in {:?}", report.verdicts);
    let passed = picked.iter().all(|v| v.passed);
    let detail = picked.iter().map(|v| v.line()).collect::<Vec<_>>().join("; ");
    (passed, detail)
}

fn operator_vs_brute_force() -> (bool, String) {
    let spec = ProblemSpec::new(
        1,
        HamiltonianKind::QuadraticIso { c: 1.0 },
        |x| 0.5 * (2.0 * x[0]).sin() + 0.25 * x[0].abs(),
        1.0,
    )
    .with_sigma(0.4);
    let grid = SpatialGrid::new(&[-3.0], &[3.0], 201).unwrap();
    let lip = 1.25;
    let phi = GridFunction::sample(&grid, |x| spec.terminal_at(x), lip).unwrap();
    let q_max = effective_control_bound(&spec, lip, &[]).unwrap();
    let cfg = OperatorConfig::new(1, q_max).unwrap();
    let (t, delta) = (0.5, 0.05);
    let fast = apply_slice(&spec, t, delta, &phi, &cfg).unwrap();
    let candidates = 100_000;
    let radius = q_max * delta;
    let worst = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let x = grid.coord(0, node);
            let mut best = f64::INFINITY;
            for i in 0..=candidates {
                let y = x - radius + 2.0 * radius * i as f64 / candidates as f64;
                let q = (x - y) / delta;
                let l = legendre(&spec, t, &[x], &[q]).unwrap().value;
                best = best.min(delta * l + frozen_expectation(&spec, t, &[y], delta, &phi, &cfg.quad));
            }
            (fast.values[node] - best).abs()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max);
    (worst <= 1e-6, format!("max |apply - brute force| {worst:.3e} over 201 nodes (tol 1e-6)"))
}

fn quadrature_vs_monte_carlo() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let grid = SpatialGrid::new(&[-6.0], &[6.0], 6001).unwrap();
    let quad = QuadratureRule::gauss_hermite(7, 1).unwrap();
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let a = rng.gen_range(0.2..1.0);
        let w = rng.gen_range(0.5..2.0);
        let ph = rng.gen_range(0.0..6.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let c = rng.gen_range(-1.0..1.0);
        let phi = GridFunction::sample(
            &grid,
            |x| a * (w * x[0] + ph).sin() + b * (-(x[0] - c).powi(2)).exp(),
            a * w + b.abs(),
        )
        .unwrap();
        let sigma = rng.gen_range(0.2..1.0);
        let drift = rng.gen_range(-0.5..0.5);
        let spec = ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, |_| 0.0, 1.0)
            .with_sigma(sigma)
            .with_drift(&[drift]);
        let y = rng.gen_range(-2.0..2.0);
        let delta = rng.gen_range(0.01..0.2);
        let gh = frozen_expectation(&spec, 0.0, &[y], delta, &phi, &quad);
        let mc = mc_expectation(&spec, 0.0, &[y], delta, &phi, 1_000_000, 77 + case).unwrap();
        worst = worst.max((gh - mc.mean).abs() / mc.std_error);
    }
    (worst <= 4.0, format!("worst |GH7 - MC| = {worst:.3} standard errors over 20 cases (tol 4)"))
}

fn determinism() -> (bool, String) {
    let smooth = experiment(SMOOTH);
    let switching = experiment(SWITCHING);
    let run = |threads: usize| -> Vec<Vec<u8>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut sol_csv = Vec::new();
            solve(&smooth.spec, 0.05, &smooth.grid, &smooth.operator)
                .unwrap()
                .write_csv(&mut sol_csv)
                .unwrap();
            let mut conv = Vec::new();
            run_convergence(&smooth).unwrap().write_csv(&mut conv).unwrap();
            let mut sw = Vec::new();
            run_switching_study(&switching).unwrap().report.write_csv(&mut sw).unwrap();
            vec![sol_csv, conv, sw]
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let passed = a == b && a == c;
    (
        passed,
        format!(
            "solve, converge and switching CSVs ({} bytes) identical across reruns and thread counts: {passed}",
            a.iter().map(Vec::len).sum::<usize>()
        ),
    )
}

fn main() -> ExitCode {
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let mut lines = Vec::new();

    lines.push(timed(1, "operator matches brute-force minimization", minutes(1), operator_vs_brute_force));
    lines.push(timed(2, "Gauss-Hermite expectation matches Monte Carlo", None, quadrature_vs_monte_carlo));

    let smooth = experiment(SMOOTH);
    let mut props = None;
    lines.push(timed(3, "property suites", minutes(5), || {
        let report = run_property_suite(&smooth, &PropertyOptions::default());
        let failed: Vec<_> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
        let detail = format!("{} suites, failed: {failed:?}", report.suites.len());
        props = Some(report);
        (failed.is_empty(), detail)
    }));
    lines.push(timed(4, "consistency residual halves with delta", None, || {
        let s = props.as_ref().unwrap().get("consistency_decay").expect("consistency suite runs");
        (s.passed, s.detail.clone())
    }));

    let mut smooth_report = None;
    lines.push(timed(5, "smooth-case rate", minutes(10), || {
        let r = run_convergence(&smooth).unwrap();
        let out = verdict_summary(&r, &["rate >= 0.35", "errors strictly decreasing"]);
        smooth_report = Some(r);
        out
    }));

    let obstacle = experiment(OBSTACLE);
    let mut obstacle_report = None;
    lines.push(timed(6, "obstacle-case rate", minutes(20), || {
        let r = run_convergence(&obstacle).unwrap();
        let out = verdict_summary(&r, &["rate >= 0.10", "errors nonincreasing"]);
        obstacle_report = Some(r);
        out
    }));

    lines.push(timed(7, "last-interval constant stable within x2", None, || {
        let kinked = run_convergence(&experiment(KINKED)).unwrap();
        let obstacle = obstacle_report.as_ref().unwrap();
        let (a, b) = (kinked.last_interval_spread(), obstacle.last_interval_spread());
        (
            a <= 2.0 && b <= 2.0,
            format!("max/min kinked {a:.4}, obstacle {b:.4}"),
        )
    }));

    let switching = experiment(SWITCHING);
    lines.push(timed(8, "switching sandwich", minutes(15), || {
        let study = run_switching_study(&switching).unwrap();
        let detail = study.verdicts.iter().map(|v| v.line()).collect::<Vec<_>>().join("; ");
        (study.all_passed(), detail)
    }));

    lines.push(timed(9, "byte-identical reruns", None, determinism));

    for l in &lines {
        println!(
            "{} [{}] {} ({:.1}s): {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.elapsed.as_secs_f64(),
            l.detail
        );
    }
    if let Some(r) = &smooth_report {
        println!(
            "info: smooth-case last-interval spread {:.4} (error is O(delta) on smooth data)",
            r.last_interval_spread()
        );
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
