//! The variant switching system with `m` controlled components and one
//! stop-or-switch component:
//!
//! ```text
//! max{ −∂ₜvᵢ − ½tr(σσᵀD²vᵢ) − (b − qᵢ)·Dvᵢ − L(qᵢ),  vᵢ − Mᵢv } = 0,   i = 1..m
//! v_{m+1} = min{ f, min_{j ≤ m} (v_j + k) }
//! Mᵢv = min_{j ≠ i} (v_j + k)
//! ```
//!
//! Time stepping is implicit, on the same stencils as the finite-difference
//! oracle, so the gaps `vᵢ − u^m` compare like with like.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{fmt_sci, GridFunction, ReportingRegion, SpatialGrid};
use crate::hamiltonian::{ProblemSpec, Vector};
use crate::reference::{
    fd_hjb_finite_controls, ControlSetApprox, CostTable, FDSolverConfig, RowTable, StepSystem,
};
use crate::scheme::{write_slice_rows, TimeSlices};

/// Largest number of controlled components accepted.
pub const MAX_COMPONENTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingConfig {
    pub controls: ControlSetApprox,
    pub k: f64,
    pub grid: SpatialGrid,
    pub time_steps: usize,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
}

impl SwitchingConfig {
    pub fn new(controls: ControlSetApprox, k: f64, grid: SpatialGrid, time_steps: usize) -> Self {
        SwitchingConfig {
            controls,
            k,
            grid,
            time_steps,
            fp_tol: 1e-10,
            fp_max_iters: 10_000,
        }
    }

    fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::InvalidConfig(format!("switching cost must be positive, got {}", self.k)));
        }
        let m = self.controls.len();
        if m == 0 || m > MAX_COMPONENTS {
            return Err(Error::InvalidConfig(format!(
                "need 1..={MAX_COMPONENTS} controls, got {m}"
            )));
        }
        if self.time_steps == 0 || !(self.fp_tol > 0.0) || self.fp_max_iters == 0 {
            return Err(Error::InvalidConfig("time_steps, fp_tol and fp_max_iters must be positive".into()));
        }
        if self.grid.dim() != spec.dim {
            return Err(Error::InvalidConfig(format!(
                "grid dimension {} does not match problem dimension {}",
                self.grid.dim(),
                spec.dim
            )));
        }
        Ok(())
    }

    fn q_max(&self) -> f64 {
        self.controls
            .controls
            .iter()
            .flat_map(|q| q.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}

/// Components `v_1 … v_{m+1}`, each on the shared descending time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSolution {
    pub k: f64,
    pub components: Vec<TimeSlices>,
    /// Largest number of Gauss–Seidel sweeps used at any time step.
    pub max_sweeps: usize,
}

impl SwitchingSolution {
    pub fn times(&self) -> &[f64] {
        &self.components[0].times
    }

    /// Number of controlled components `m`.
    pub fn m(&self) -> usize {
        self.components.len() - 1
    }

    /// Columns `component, t, x…, value`. Components are numbered from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.components[0].grid().dim();
        let axes = ["x0", "x1"];
        writeln!(out, "component,t,{},value", axes[..dim].join(","))?;
        for (c, comp) in self.components.iter().enumerate() {
            for (t, slice) in comp.times.iter().zip(&comp.slices) {
                write_slice_rows(&mut out, &[(c + 1).to_string(), fmt_sci(*t)], slice)?;
            }
        }
        Ok(())
    }
}

fn time_at(spec: &ProblemSpec, cfg: &SwitchingConfig, step: usize) -> f64 {
    if step == cfg.time_steps {
        0.0
    } else {
        spec.horizon - step as f64 * spec.horizon / cfg.time_steps as f64
    }
}

/// Implicit one-control step tables for every controlled component at `t`.
fn component_tables(spec: &ProblemSpec, cfg: &SwitchingConfig, t: f64) -> Result<Vec<RowTable>> {
    cfg.controls
        .controls
        .iter()
        .map(|q| {
            let one: [Vector; 1] = [*q];
            let costs = CostTable::build(spec, &cfg.grid, t, &one)?;
            RowTable::build(spec, &cfg.grid, t, &one, &costs)
        })
        .collect()
}

/// `Mᵢv` at every node; `exclude` is the component index to skip.
fn switching_obstacle(values: &[Vec<f64>], exclude: usize, k: f64, out: &mut [f64]) {
    for (node, o) in out.iter_mut().enumerate() {
        *o = values
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != exclude)
            .map(|(_, v)| v[node] + k)
            .fold(f64::INFINITY, f64::min);
    }
}

fn stop_component(values: &[Vec<f64>], m: usize, k: f64, f: &[f64]) -> Vec<f64> {
    (0..f.len())
        .map(|node| {
            let best = values[..m].iter().map(|v| v[node] + k).fold(f64::INFINITY, f64::min);
            f[node].min(best)
        })
        .collect()
}

/// Backward implicit time stepping with component Gauss–Seidel at each step.
pub fn solve_switching(spec: &ProblemSpec, cfg: &SwitchingConfig) -> Result<SwitchingSolution> {
    cfg.check(spec)?;
    let grid = &cfg.grid;
    let n = grid.dim();
    let m = cfg.controls.len();
    let dt = spec.horizon / cfg.time_steps as f64;
    let nodes: Vec<Vector> = grid.nodes().collect();
    let terminal: Vec<f64> = nodes.iter().map(|x| spec.terminal_at(&x[..n])).collect();

    let mut times = vec![spec.horizon];
    let mut history: Vec<Vec<Vec<f64>>> = vec![vec![terminal; m + 1]];
    let mut obstacle = vec![0.0; grid.len()];
    let mut max_sweeps = 0;
    for step in 1..=cfg.time_steps {
        let t = time_at(spec, cfg, step);
        let tables = component_tables(spec, cfg, t)?;
        let f: Vec<f64> = nodes.iter().map(|x| spec.obstacle_at(t, &x[..n])).collect();
        let prev = history.last().unwrap();
        let mut cur = prev.clone();
        cur[m] = stop_component(&cur, m, cfg.k, &f);
        let mut converged = false;
        let mut change = f64::INFINITY;
        for sweep in 1..=cfg.fp_max_iters {
            change = 0.0_f64;
            for i in 0..m {
                switching_obstacle(&cur, i, cfg.k, &mut obstacle);
                let system = StepSystem {
                    grid,
                    prev: &prev[i],
                    dt,
                    theta: 1.0,
                    table: &tables[i],
                    obstacle: &obstacle,
                };
                let (v, _, _) = system.solve_policy_iteration(&cur[i], cfg.fp_tol, 10_000, t)?;
                change = change.max(max_abs_diff(&v, &cur[i]));
                cur[i] = v;
            }
            let stop = stop_component(&cur, m, cfg.k, &f);
            change = change.max(max_abs_diff(&stop, &cur[m]));
            cur[m] = stop;
            if change <= cfg.fp_tol {
                max_sweeps = max_sweeps.max(sweep);
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::FixedPointDiverged {
                iterations: cfg.fp_max_iters,
                t,
                residual: change,
            });
        }
        times.push(t);
        history.push(cur);
    }

    let mut components = Vec::with_capacity(m + 1);
    for c in 0..=m {
        let slices = history
            .iter()
            .map(|h| GridFunction::new(grid.clone(), h[c].clone(), spec.lipschitz_m))
            .collect::<Result<Vec<_>>>()?;
        components.push(TimeSlices {
            times: times.clone(),
            slices,
        });
    }
    Ok(SwitchingSolution {
        k: cfg.k,
        components,
        max_sweeps,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max-norm of the discrete residual of component `component` (0-based; `m`
/// is the stop component) at the stored time `t`.
pub fn switching_residual(
    sol: &SwitchingSolution,
    spec: &ProblemSpec,
    cfg: &SwitchingConfig,
    t: f64,
    component: usize,
) -> Result<f64> {
    let m = sol.m();
    if component > m {
        return Err(Error::InvalidConfig(format!("component {component} out of range 0..={m}")));
    }
    let idx = sol.components[0].index_of(t).ok_or(Error::OutOfRange {
        t,
        horizon: spec.horizon,
    })?;
    if idx == 0 {
        return Err(Error::InvalidConfig("the terminal time has no residual".into()));
    }
    let grid = &cfg.grid;
    let n = grid.dim();
    let values: Vec<Vec<f64>> = sol.components.iter().map(|c| c.slices[idx].values.clone()).collect();
    let f: Vec<f64> = grid.nodes().map(|x| spec.obstacle_at(t, &x[..n])).collect();
    if component == m {
        let stop = stop_component(&values, m, cfg.k, &f);
        return Ok(max_abs_diff(&stop, &values[m]));
    }
    let tables = component_tables(spec, cfg, t)?;
    let mut obstacle = vec![0.0; grid.len()];
    switching_obstacle(&values, component, cfg.k, &mut obstacle);
    let dt = sol.times()[idx - 1] - t;
    let prev = &sol.components[component].slices[idx - 1].values;
    let system = StepSystem {
        grid,
        prev,
        dt,
        theta: 1.0,
        table: &tables[component],
        obstacle: &obstacle,
    };
    Ok(system.residual(&values[component]))
}

/// Gaps `vᵢ − u^m` for one switching cost.
#[derive(Debug, Clone, PartialEq)]
pub struct KSweepRow {
    pub k: f64,
    pub max_gap: f64,
    pub min_gap: f64,
    /// Largest defect of the stop-component identity over all nodes and times.
    pub identity_defect: f64,
    /// The gap is comparable to the solution scale, so this `k` is not small.
    pub outside_asymptotic_regime: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweepReport {
    pub rows: Vec<KSweepRow>,
    /// Least-squares slope of `log max_gap` against `log k`.
    pub slope: f64,
    pub reference_sup: f64,
}

impl KSweepReport {
    pub fn max_gap_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].max_gap <= w[0].max_gap)
    }

    pub fn min_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.min_gap).fold(f64::INFINITY, f64::min)
    }

    /// Columns `k, max_gap, min_gap, slope`; the slope repeats on every row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,max_gap,min_gap,slope")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_sci(r.k),
                fmt_sci(r.max_gap),
                fmt_sci(r.min_gap),
                fmt_sci(self.slope)
            )?;
        }
        Ok(())
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Solves the switching system for each `k` and compares against `u^m` from
/// the finite-difference oracle on the same grid and time steps.
pub fn k_sweep(
    spec: &ProblemSpec,
    cfg: &SwitchingConfig,
    ks: &[f64],
    region: &ReportingRegion,
) -> Result<KSweepReport> {
    if ks.is_empty() || ks.windows(2).any(|w| w[1] >= w[0]) || ks.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::InvalidConfig("switching costs must be positive and strictly decreasing".into()));
    }
    cfg.check(spec)?;
    let mut fd_cfg = FDSolverConfig::new(cfg.grid.clone(), cfg.time_steps, cfg.q_max().max(1e-12));
    fd_cfg.psor_tol = cfg.fp_tol;
    let um = fd_hjb_finite_controls(spec, &cfg.controls, &fd_cfg)?;
    let region_nodes = region.nodes(&cfg.grid);
    let reference_sup = um
        .slices
        .slices
        .iter()
        .flat_map(|s| s.values.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let cfg_k = SwitchingConfig { k, ..cfg.clone() };
        let sol = solve_switching(spec, &cfg_k)?;
        let mut max_gap = f64::NEG_INFINITY;
        let mut min_gap = f64::INFINITY;
        let mut identity_defect = 0.0_f64;
        for (ti, &t) in sol.times().iter().enumerate() {
            if ti > 0 {
                identity_defect = identity_defect.max(switching_residual(&sol, spec, &cfg_k, t, sol.m())?);
            }
            if !region.contains_time(t) {
                continue;
            }
            let reference = &um.slices.slices[ti].values;
            for comp in &sol.components {
                let v = &comp.slices[ti].values;
                for &node in &region_nodes {
                    let gap = v[node] - reference[node];
                    max_gap = max_gap.max(gap);
                    min_gap = min_gap.min(gap);
                }
            }
        }
        rows.push(KSweepRow {
            k,
            max_gap,
            min_gap,
            identity_defect,
            outside_asymptotic_regime: max_gap >= 0.5 * reference_sup.max(1e-300),
        });
    }
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.max_gap > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.k.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.max_gap.ln()).collect();
        ols_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(KSweepReport {
        rows,
        slope,
        reference_sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HamiltonianKind, Obstacle};
    use crate::reference::fd_hjb_finite_controls;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(&[-2.0], &[2.0], 81).unwrap()
    }

    fn spec() -> ProblemSpec {
        ProblemSpec::new(
            1,
            HamiltonianKind::QuadraticIso { c: 1.0 },
            |x: &[f64]| 0.5 * x[0].sin(),
            0.5,
        )
        .with_sigma(0.4)
        .with_obstacle(Obstacle::Field(std::sync::Arc::new(|_, x: &[f64]| {
            0.3 + 0.2 * x[0].abs().min(1.0)
        })))
    }

    #[test]
    fn constants_solve_every_component() {
        let s = ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, |_| 0.4, 1.0)
            .with_sigma(0.3)
            .with_obstacle(Obstacle::Constant(0.4));
        let cfg = SwitchingConfig::new(ControlSetApprox::equally_spaced(1, 0.0), 0.1, grid(), 10);
        let sol = solve_switching(&s, &cfg).unwrap();
        for comp in &sol.components {
            for sl in &comp.slices {
                assert!(sl.values.iter().all(|v| (v - 0.4).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn huge_cost_decouples() {
        let s = spec().with_obstacle(Obstacle::None);
        let controls = ControlSetApprox::equally_spaced(1, 0.5);
        let cfg = SwitchingConfig::new(controls.clone(), 1e3, grid(), 20);
        let sol = solve_switching(&s, &cfg).unwrap();
        let fd = fd_hjb_finite_controls(&s, &controls, &FDSolverConfig::new(grid(), 20, 0.5)).unwrap();
        for (a, b) in sol.components[0].slices.iter().zip(&fd.slices.slices) {
            assert!(max_abs_diff(&a.values, &b.values) < 1e-9);
        }
        let v1 = &sol.components[0].slices[20].values;
        let v2 = &sol.components[1].slices[20].values;
        assert!(v1.iter().zip(v2).all(|(a, b)| (b - (a + 1e3)).abs() < 1e-9));
    }

    #[test]
    fn identities_and_pairwise_bound() {
        let s = spec();
        let cfg = SwitchingConfig::new(ControlSetApprox::equally_spaced(3, 1.0), 0.05, grid(), 20);
        let sol = solve_switching(&s, &cfg).unwrap();
        let m = sol.m();
        for comp in &sol.components {
            assert_eq!(comp.slices[0].values, sol.components[0].slices[0].values);
        }
        for (ti, &t) in sol.times().iter().enumerate().skip(1) {
            for c in 0..=m {
                let r = switching_residual(&sol, &s, &cfg, t, c).unwrap();
                assert!(r <= 1e-8, "component {c} t {t}: {r}");
            }
            for i in 0..=m {
                for j in 0..=m {
                    let vi = &sol.components[i].slices[ti].values;
                    let vj = &sol.components[j].slices[ti].values;
                    assert!(vi.iter().zip(vj).all(|(a, b)| *a <= b + cfg.k + 1e-9));
                }
            }
        }
    }

    #[test]
    fn residual_detects_perturbation() {
        let s = spec();
        let cfg = SwitchingConfig::new(ControlSetApprox::equally_spaced(2, 1.0), 0.1, grid(), 10);
        let mut sol = solve_switching(&s, &cfg).unwrap();
        let t = sol.times()[5];
        for v in sol.components[0].slices[5].values.iter_mut() {
            *v += 1.0;
        }
        assert!(switching_residual(&sol, &s, &cfg, t, 0).unwrap() > 0.5);
        for v in sol.components[2].slices[5].values.iter_mut() {
            *v += 1.0;
        }
        assert!((switching_residual(&sol, &s, &cfg, t, 2).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn larger_cost_dominates() {
        let s = spec();
        let base = SwitchingConfig::new(ControlSetApprox::equally_spaced(3, 1.0), 0.2, grid(), 20);
        let hi = solve_switching(&s, &base).unwrap();
        let lo = solve_switching(&s, &SwitchingConfig { k: 0.05, ..base }).unwrap();
        for (a, b) in hi.components.iter().zip(&lo.components) {
            for (sa, sb) in a.slices.iter().zip(&b.slices) {
                assert!(sa.values.iter().zip(&sb.values).all(|(x, y)| x + 1e-9 >= *y));
            }
        }
    }

    #[test]
    fn sweep_report_shape() {
        let s = spec();
        let cfg = SwitchingConfig::new(ControlSetApprox::equally_spaced(3, 1.0), 0.1, grid(), 20);
        let region = ReportingRegion::whole(&cfg.grid, s.horizon);
        let rep = k_sweep(&s, &cfg, &[0.2, 0.1, 0.05], &region).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.min_gap() >= -1e-8, "{}", rep.min_gap());
        assert!(rep.max_gap_nonincreasing());
        assert!(rep.slope.is_finite());
        assert!(rep.rows.iter().all(|r| r.identity_defect <= 1e-12));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,max_gap,min_gap,slope\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(k_sweep(&s, &cfg, &[0.1, 0.2], &region).is_err());
    }

    #[test]
    fn ols_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        assert!((ols_slope(&xs, &ys) + 2.0).abs() < 1e-14);
    }
}
