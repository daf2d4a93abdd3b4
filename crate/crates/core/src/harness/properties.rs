//! Invariant checks on a configured problem. Failures are reported in the
//! summary, never raised.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{GridFunction, Interpolation, SpatialGrid};
use crate::hamiltonian::{effective_control_bound, eval_h, grad_h, legendre, ProblemSpec, Vector};
use crate::harness::config::Experiment;
use crate::harness::convergence::Verdict;
use crate::operator::{apply, apply_slice, OperatorConfig};
use crate::reference::ControlSetApprox;
use crate::scheme::{residual_sbar, solve, step, uniform_bound, SchemeSolution};
use crate::switching::{solve_switching, switching_residual, SwitchingConfig};

pub const FENCHEL_TOL: f64 = 1e-8;
pub const ORDER_TOL: f64 = 1e-10;
pub const FIXED_POINT_TOL: f64 = 1e-9;

/// Knobs of [`run_property_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOptions {
    /// Interpolation fed to the operator suites; the default is the only
    /// monotone choice.
    pub interp: Interpolation,
    pub fenchel_pairs: usize,
    pub slice_pairs: usize,
    pub consistency_deltas: Vec<f64>,
    pub include_switching: bool,
}

impl Default for PropertyOptions {
    fn default() -> Self {
        PropertyOptions {
            interp: Interpolation::Multilinear,
            fenchel_pairs: 1000,
            slice_pairs: 100,
            consistency_deltas: vec![0.04, 0.02, 0.01],
            include_switching: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest violation seen (suite-specific units).
    pub worst: f64,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, cases: usize, worst: f64, tol: f64) -> Self {
        SuiteResult {
            name,
            passed: worst <= tol,
            cases,
            worst,
            detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
        }
    }

    fn failed(name: &'static str, detail: String) -> Self {
        SuiteResult {
            name,
            passed: false,
            cases: 0,
            worst: f64::INFINITY,
            detail,
        }
    }

    pub fn verdict(&self) -> Verdict {
        Verdict::new(self.name, self.passed, format!("{} cases, {}", self.cases, self.detail))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub suites: Vec<SuiteResult>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn get(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.suites {
            writeln!(out, "{}", s.verdict().line())?;
        }
        Ok(())
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vector {
    let mut v = [0.0; 2];
    for x in v.iter_mut().take(dim) {
        *x = rng.gen_range(-r..r);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p·q ≤ H(p) + L(q)` on random pairs, with equality at `q = ∇H(p)`.
/// `worst` is the relative violation.
pub fn fenchel_young_suite(spec: &ProblemSpec, pairs: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.dim;
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let t = rng.gen_range(0.0..spec.horizon);
        let x = random_vector(&mut rng, n, 2.0);
        let p = random_vector(&mut rng, n, 2.0);
        let q = random_vector(&mut rng, n, 2.0);
        let h = eval_h(spec, t, &x[..n], &p[..n]);
        let l = match legendre(spec, t, &x[..n], &q[..n]) {
            Ok(d) => d.value,
            Err(e) => return SuiteResult::failed("fenchel_young", e.to_string()),
        };
        let scale = 1.0 + h.abs() + l.abs();
        worst = worst.max((dot(&p[..n], &q[..n]) - h - l) / scale);
        let g = grad_h(spec, t, &x[..n], &p[..n]);
        let lg = match legendre(spec, t, &x[..n], &g[..n]) {
            Ok(d) => d.value,
            Err(e) => return SuiteResult::failed("fenchel_young", e.to_string()),
        };
        let eq = (dot(&p[..n], &g[..n]) - h - lg).abs() / (1.0 + h.abs() + lg.abs());
        worst = worst.max(eq);
    }
    SuiteResult::new("fenchel_young", pairs, worst, FENCHEL_TOL)
}

/// Midpoint convexity of `L` and `sup_q {p·q − L(q)} = H(p)` along the ray
/// through `∇H(p)`.
pub fn convexity_suite(spec: &ProblemSpec, cases: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n = spec.dim;
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let t = rng.gen_range(0.0..spec.horizon);
        let x = random_vector(&mut rng, n, 2.0);
        let q1 = random_vector(&mut rng, n, 2.0);
        let q2 = random_vector(&mut rng, n, 2.0);
        let mid = [(q1[0] + q2[0]) / 2.0, (q1[1] + q2[1]) / 2.0];
        let l = |q: &Vector| legendre(spec, t, &x[..n], &q[..n]).map(|d| d.value);
        let (a, b, m) = match (l(&q1), l(&q2), l(&mid)) {
            (Ok(a), Ok(b), Ok(m)) => (a, b, m),
            _ => return SuiteResult::failed("convexity_biconjugacy", "dual evaluation failed".into()),
        };
        worst = worst.max((m - 0.5 * (a + b)) / (1.0 + a.abs() + b.abs()));

        let p = random_vector(&mut rng, n, 2.0);
        let g = grad_h(spec, t, &x[..n], &p[..n]);
        let h = eval_h(spec, t, &x[..n], &p[..n]);
        // golden section on s ↦ p·(s g) − L(s g), concave in s
        let phi = |s: f64| {
            let q = [s * g[0], s * g[1]];
            dot(&p[..n], &q[..n]) - l(&q).unwrap_or(f64::INFINITY)
        };
        let (mut lo, mut hi) = (0.0, 2.0);
        let r = 0.618_033_988_749_894_9;
        let mut c = hi - r * (hi - lo);
        let mut d = lo + r * (hi - lo);
        let (mut fc, mut fd) = (phi(c), phi(d));
        for _ in 0..80 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - r * (hi - lo);
                fc = phi(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + r * (hi - lo);
                fd = phi(d);
            }
        }
        let sup = fc.max(fd).max(phi(1.0));
        worst = worst.max((sup - h).abs() / (1.0 + h.abs()));
    }
    SuiteResult::new("convexity_biconjugacy", cases, worst, FENCHEL_TOL)
}

/// Smooth random slice with Lipschitz constant at most `lip`.
fn random_smooth(grid: &SpatialGrid, rng: &mut ChaCha8Rng, lip: f64) -> GridFunction {
    let n = grid.dim();
    let modes: Vec<(Vector, f64, f64)> = (0..3)
        .map(|_| (random_vector(rng, n, 1.5), rng.gen_range(0.0..6.3), rng.gen_range(-1.0..1.0)))
        .collect();
    let raw_lip: f64 = modes
        .iter()
        .map(|(k, _, a)| a.abs() * k[..n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    let scale = if raw_lip > 0.0 { lip / raw_lip } else { 1.0 };
    let offset = rng.gen_range(-1.0..1.0);
    GridFunction::sample(
        grid,
        |x| offset + scale * modes.iter().map(|(k, ph, a)| a * (dot(&k[..n], x) + ph).sin()).sum::<f64>(),
        lip,
    )
    .expect("finite samples")
}

/// Nonnegative smooth bump with Lipschitz constant at most `lip`.
fn random_bump(grid: &SpatialGrid, rng: &mut ChaCha8Rng, lip: f64) -> Vec<f64> {
    let n = grid.dim();
    let c = random_vector(rng, n, 1.0);
    let w = rng.gen_range(0.2..1.0);
    let amp = rng.gen_range(0.0..1.0) * lip * w / (-0.5f64).exp();
    grid.nodes()
        .map(|x| {
            let r2: f64 = (0..n).map(|a| (x[a] - c[a]).powi(2)).sum();
            amp * (-0.5 * r2 / (w * w)).exp()
        })
        .collect()
}

fn with_values(grid: &SpatialGrid, values: Vec<f64>, lip: f64) -> GridFunction {
    GridFunction::new(grid.clone(), values, lip).expect("finite samples")
}

/// Monotonicity, constant shift and concavity of `S_t(Δ)` on random slice
/// pairs. Returns the three suite results in that order.
pub fn operator_suites(
    spec: &ProblemSpec,
    grid: &SpatialGrid,
    cfg: &OperatorConfig,
    p_probe: f64,
    delta: f64,
    pairs: usize,
    seed: u64,
) -> [SuiteResult; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let t = (spec.horizon - delta).max(0.0) * 0.5;
    let lip = 0.5 * p_probe;
    let mut mono = 0.0_f64;
    let mut shift = 0.0_f64;
    let mut conc = 0.0_f64;
    let h = grid.spacing()[0];
    for _ in 0..pairs {
        let phi = random_smooth(grid, &mut rng, lip);
        let bump = random_bump(grid, &mut rng, 0.25 * p_probe);
        let smooth: Vec<f64> = phi.values.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let mut spiky = smooth.clone();
        let spike_node = rng.gen_range(0..grid.len());
        spiky[spike_node] += rng.gen_range(0.5..1.0) * 0.25 * p_probe * h;
        let c = rng.gen_range(-1.0..1.0);
        let psi = with_values(grid, smooth.clone(), lip);
        let psi_spiky = with_values(grid, spiky, lip);
        let shifted = phi.map_values(|v| v + c);
        let mid = with_values(
            grid,
            phi.values.iter().zip(&smooth).map(|(a, b)| 0.5 * a + 0.5 * b).collect(),
            lip,
        );
        let run = |f: &GridFunction| apply_slice(spec, t, delta, f, cfg);
        let outs = match (run(&phi), run(&psi), run(&psi_spiky), run(&shifted), run(&mid)) {
            (Ok(a), Ok(b), Ok(s), Ok(c), Ok(m)) => (a, b, s, c, m),
            (a, b, s, c, m) => {
                let err = [a.err(), b.err(), s.err(), c.err(), m.err()]
                    .into_iter()
                    .flatten()
                    .next()
                    .map(|e| e.to_string())
                    .unwrap_or_default();
                let f = |name| SuiteResult::failed(name, err.clone());
                return [f("operator_monotonicity"), f("operator_shift"), f("operator_concavity")];
            }
        };
        let (sa, sb, ss, sc, sm) = outs;
        for i in 0..grid.len() {
            mono = mono.max(sa.values[i] - sb.values[i]).max(sa.values[i] - ss.values[i]);
            shift = shift.max((sc.values[i] - sa.values[i] - c).abs());
            conc = conc.max(0.5 * sa.values[i] + 0.5 * sb.values[i] - sm.values[i]);
        }
    }
    let cases = pairs * grid.len();
    [
        SuiteResult::new("operator_monotonicity", cases, mono, ORDER_TOL),
        SuiteResult::new("operator_shift", cases, shift, FIXED_POINT_TOL),
        SuiteResult::new("operator_concavity", cases, conc, ORDER_TOL),
    ]
}

/// `u ≤ f`, the recursion identity and `S̄ = 0` at every node and time,
/// plus the uniform bound.
pub fn solved_instance_suites(
    spec: &ProblemSpec,
    sol: &SchemeSolution,
    cfg: &OperatorConfig,
) -> [SuiteResult; 3] {
    let grid = sol.slices.grid();
    let n = spec.dim;
    let times = sol.times();
    let mut cap = 0.0_f64;
    let mut fixed = 0.0_f64;
    let mut cases = 0;
    for k in 1..times.len() {
        let t = times[k];
        let dt = times[k - 1] - t;
        let cur = &sol.slices.slices[k];
        let next = &sol.slices.slices[k - 1];
        let again = match step(spec, t, dt, next, cfg) {
            Ok(s) => s,
            Err(e) => {
                let f = |name| SuiteResult::failed(name, e.to_string());
                return [f("obstacle_cap"), f("fixed_point_residual"), f("uniform_bound")];
            }
        };
        let sbar: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                residual_sbar(spec, dt, t, &x[..n], cur.values[i], next, cfg).unwrap_or(f64::INFINITY)
            })
            .collect();
        for i in 0..grid.len() {
            let x = grid.node(i);
            cap = cap.max(cur.values[i] - spec.obstacle_at(t, &x[..n]));
            fixed = fixed.max((cur.values[i] - again.values[i]).abs()).max(sbar[i].abs());
            cases += 1;
        }
    }
    let bound = uniform_bound(spec, grid, times);
    let sup = sol.slices.slices.iter().map(|s| s.sup_norm()).fold(0.0, f64::max);
    let mut ub = SuiteResult::new("uniform_bound", times.len() * grid.len(), (sup - bound).max(0.0), 0.0);
    ub.detail = format!("sup {sup:.6} vs bound {bound:.6}");
    [
        SuiteResult::new("obstacle_cap", cases, cap.max(0.0), FIXED_POINT_TOL),
        SuiteResult::new("fixed_point_residual", cases, fixed, FIXED_POINT_TOL),
        ub,
    ]
}

/// Ordered data give ordered discrete solutions.
pub fn comparison_suite(spec: &ProblemSpec, delta: f64, grid: &SpatialGrid, cfg: &OperatorConfig) -> SuiteResult {
    let base = spec.clone();
    let upper = base.terminal.clone();
    let lower = {
        let u = upper.clone();
        move |x: &[f64]| u(x) - 0.1 - 0.05 * (x[0]).cos().powi(2)
    };
    let f = base.obstacle.clone();
    let mut low = base.clone();
    low.terminal = std::sync::Arc::new(lower);
    low.obstacle = match f {
        crate::hamiltonian::Obstacle::None => crate::hamiltonian::Obstacle::None,
        other => crate::hamiltonian::Obstacle::Field(std::sync::Arc::new(move |t, x| other.eval(t, x) - 0.05)),
    };
    match (solve(&low, delta, grid, cfg), solve(&base, delta, grid, cfg)) {
        (Ok(a), Ok(b)) => {
            let mut worst = 0.0_f64;
            for (sa, sb) in a.slices.slices.iter().zip(&b.slices.slices) {
                for (x, y) in sa.values.iter().zip(&sb.values) {
                    worst = worst.max(x - y);
                }
            }
            SuiteResult::new("comparison", a.slices.slices.len() * grid.len(), worst, ORDER_TOL)
        }
        (Err(e), _) | (_, Err(e)) => SuiteResult::failed("comparison", e.to_string()),
    }
}

/// Sup over the evaluation points of `|(φ(t) − S_t(Δ)φ(t+Δ))/Δ − Gφ|` with
/// `φ(t,x) = (1+t)exp(−x²)` and `G` the continuous generator. One-dimensional.
pub fn consistency_residuals(
    spec: &ProblemSpec,
    t: f64,
    deltas: &[f64],
    grid: &SpatialGrid,
    xs: &[f64],
    cfg: &OperatorConfig,
) -> Result<Vec<f64>> {
    let phi = |t: f64, x: f64| (1.0 + t) * (-x * x).exp();
    let phi_t = |x: f64| (-x * x).exp();
    let phi_x = |t: f64, x: f64| -2.0 * x * phi(t, x);
    let phi_xx = |t: f64, x: f64| (4.0 * x * x - 2.0) * phi(t, x);
    deltas
        .iter()
        .map(|&delta| {
            let slice = GridFunction::sample(grid, |x| phi(t + delta, x[0]), 2.0)?;
            let res = xs
                .par_iter()
                .map(|&x| {
                    let (s, _) = apply(spec, t, delta, &slice, &[x], cfg)?;
                    let sig = spec.sigma.eval(t, &[x])[0][0];
                    let b = spec.drift.eval(t, &[x])[0];
                    let p = phi_x(t, x);
                    let gen = -phi_t(x) - 0.5 * sig * sig * phi_xx(t, x) - b * p + eval_h(spec, t, &[x], &[p]);
                    Ok(((phi(t, x) - s) / delta - gen).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(res.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// Residual ratios between successive `Δ` must lie in `[1.6, 2.4]`.
pub fn consistency_suite(spec: &ProblemSpec, deltas: &[f64], interp: Interpolation) -> SuiteResult {
    if spec.dim != 1 {
        let mut s = SuiteResult::new("consistency_decay", 0, 0.0, 0.0);
        s.detail = "skipped: one-dimensional check".into();
        return s;
    }
    let run = || -> Result<Vec<f64>> {
        let q_max = effective_control_bound(spec, 2.0, &[])?;
        let mut cfg = OperatorConfig::new(1, q_max)?;
        cfg.interp = interp;
        let grid = SpatialGrid::new(&[-3.0], &[3.0], 6001)?;
        let xs: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 * 0.05).collect();
        let t = 0.5 * (spec.horizon - deltas[0]).max(0.0);
        consistency_residuals(spec, t, deltas, &grid, &xs, &cfg)
    };
    match run() {
        Ok(res) => {
            let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
            let passed = ratios.iter().all(|r| (1.6..=2.4).contains(r));
            let worst = ratios.iter().map(|r| (r - 2.0).abs()).fold(0.0, f64::max);
            SuiteResult {
                name: "consistency_decay",
                passed,
                cases: res.len(),
                worst,
                detail: format!(
                    "residuals {:?}, ratios {:?}",
                    res.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>(),
                    ratios.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
                ),
            }
        }
        Err(e) => SuiteResult::failed("consistency_decay", e.to_string()),
    }
}

/// Stop-component identity and pairwise bound on a small switching solve.
pub fn switching_identity_suite(spec: &ProblemSpec, grid: &SpatialGrid, q_max: f64) -> SuiteResult {
    if spec.dim != 1 {
        let mut s = SuiteResult::new("switching_identities", 0, 0.0, 0.0);
        s.detail = "skipped: one-dimensional check".into();
        return s;
    }
    let cfg = SwitchingConfig::new(ControlSetApprox::equally_spaced(2, q_max), 0.1, grid.clone(), 20);
    let sol = match solve_switching(spec, &cfg) {
        Ok(s) => s,
        Err(e) => return SuiteResult::failed("switching_identities", e.to_string()),
    };
    let m = sol.m();
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for (ti, &t) in sol.times().iter().enumerate().skip(1) {
        worst = worst.max(switching_residual(&sol, spec, &cfg, t, m).unwrap_or(f64::INFINITY));
        for i in 0..=m {
            for j in 0..=m {
                let vi = &sol.components[i].slices[ti].values;
                let vj = &sol.components[j].slices[ti].values;
                for (a, b) in vi.iter().zip(vj) {
                    worst = worst.max(a - b - cfg.k);
                }
            }
        }
        cases += grid.len();
    }
    SuiteResult::new("switching_identities", cases, worst, 1e-10)
}

/// All suites on the configured problem and grid.
pub fn run_property_suite(ex: &Experiment, opts: &PropertyOptions) -> PropertyReport {
    let spec = &ex.spec;
    let seed = ex.config.seed;
    let mut cfg = ex.operator.clone();
    cfg.interp = opts.interp;
    let delta = ex.config.deltas[0];
    let mut suites = vec![
        fenchel_young_suite(spec, opts.fenchel_pairs, seed),
        convexity_suite(spec, opts.fenchel_pairs / 10, seed),
    ];
    suites.extend(operator_suites(
        spec,
        &ex.grid,
        &cfg,
        ex.p_probe,
        delta.min(0.05),
        opts.slice_pairs,
        seed,
    ));
    match solve(spec, delta, &ex.grid, &cfg) {
        Ok(sol) => suites.extend(solved_instance_suites(spec, &sol, &cfg)),
        Err(e) => {
            for name in ["obstacle_cap", "fixed_point_residual", "uniform_bound"] {
                suites.push(SuiteResult::failed(name, e.to_string()));
            }
        }
    }
    suites.push(comparison_suite(spec, delta, &ex.grid, &cfg));
    suites.push(consistency_suite(spec, &opts.consistency_deltas, opts.interp));
    if opts.include_switching {
        suites.push(switching_identity_suite(spec, &ex.grid, ex.operator.q_max));
    }
    PropertyReport { suites }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianKind;

    fn spec() -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, |x| 0.5 * x[0].sin(), 1.0).with_sigma(0.3)
    }

    #[test]
    fn fenchel_young_on_power_kind() {
        let s = ProblemSpec::new(1, HamiltonianKind::PowerIso { m: 4, c: 0.7 }, |_| 0.0, 1.0);
        let r = fenchel_young_suite(&s, 200, 5);
        assert!(r.passed, "{r:?}");
        let r = convexity_suite(&s, 50, 5);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn catmull_rom_breaks_monotonicity() {
        let s = spec();
        let grid = SpatialGrid::new(&[-3.0], &[3.0], 121).unwrap();
        let mut cfg = OperatorConfig::new(1, 1.0).unwrap();
        let ok = operator_suites(&s, &grid, &cfg, 0.5, 0.05, 10, 1);
        assert!(ok.iter().all(|r| r.passed), "{ok:?}");
        cfg.interp = Interpolation::CatmullRom;
        let bad = operator_suites(&s, &grid, &cfg, 0.5, 0.05, 10, 1);
        assert!(!bad[0].passed, "{:?}", bad[0]);
    }

    #[test]
    fn consistency_ratios_near_two() {
        let r = consistency_suite(&spec(), &[0.04, 0.02, 0.01], Interpolation::Multilinear);
        assert!(r.passed, "{r:?}");
    }
}
