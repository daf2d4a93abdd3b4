use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::fmt_sci;
use crate::harness::config::{Experiment, OracleKind};
use crate::reference::{cole_hopf_reference, fd_vi_solve, FDSolverConfig, FdReference};
use crate::scheme::{eval_solution, solve};
use crate::switching::ols_slope;

/// Sample times per last interval `(T − Δ, T]`.
const LAST_INTERVAL_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub steps: usize,
    pub sup_error: f64,
    pub last_interval_error: f64,
    /// `last_interval_error / √Δ`
    pub last_interval_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub oracle: OracleKind,
    pub rows: Vec<ConvergenceRow>,
    pub rate: f64,
    pub excluded_coarsest: bool,
    pub verdicts: Vec<Verdict>,
}

impl ConvergenceReport {
    pub fn errors_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error)
    }

    pub fn errors_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error <= w[0].sup_error)
    }

    /// Ratio of the largest to the smallest last-interval constant.
    pub fn last_interval_spread(&self) -> f64 {
        let cs = self.rows.iter().map(|r| r.last_interval_constant);
        let hi = cs.clone().fold(f64::NEG_INFINITY, f64::max);
        let lo = cs.fold(f64::INFINITY, f64::min);
        hi / lo
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delta,steps,sup_error,last_interval_error,last_interval_constant")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_sci(r.delta),
                r.steps,
                fmt_sci(r.sup_error),
                fmt_sci(r.last_interval_error),
                fmt_sci(r.last_interval_constant)
            )?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "oracle: {:?}", self.oracle)?;
        writeln!(
            out,
            "fitted rate: {}{}",
            fmt_sci(self.rate),
            if self.excluded_coarsest { " (coarsest delta excluded)" } else { "" }
        )?;
        for v in &self.verdicts {
            writeln!(out, "{}", v.line())?;
        }
        Ok(())
    }
}

/// Reference values at arbitrary `(t, x)`.
enum Oracle {
    ColeHopf,
    Fd(FdReference),
}

impl Oracle {
    fn build(ex: &Experiment) -> Result<Self> {
        match ex.config.oracle {
            OracleKind::ColeHopf => {
                // surfaces UnsupportedProblem before any solve
                cole_hopf_reference(&ex.spec, ex.spec.horizon, &vec![0.0; ex.spec.dim])
                    .map_err(|e| Error::OracleUnavailable(e.to_string()))?;
                Ok(Oracle::ColeHopf)
            }
            OracleKind::FdVi => Ok(Oracle::Fd(fd_oracle(ex)?)),
            OracleKind::None => Err(Error::OracleUnavailable("no oracle configured".into())),
        }
    }

    fn eval(&self, ex: &Experiment, t: f64, x: &[f64]) -> Result<f64> {
        match self {
            Oracle::ColeHopf => cole_hopf_reference(&ex.spec, t, x),
            Oracle::Fd(fd) => fd.slices.eval(t, x),
        }
    }
}

/// Finite-difference reference at the configured refinement over the
/// scheme grid and finest `Δ`.
pub fn fd_oracle(ex: &Experiment) -> Result<FdReference> {
    let finest = *ex.config.deltas.last().unwrap();
    let steps = (ex.spec.horizon / finest).round() as usize * ex.config.fd.time_refinement;
    let grid = ex.grid.refined(ex.config.fd.refinement)?;
    let mut cfg = FDSolverConfig::new(grid, steps.max(1), ex.operator.q_max);
    if let Some(c) = ex.config.fd.control_points {
        cfg.control_points = c;
    }
    cfg.use_psor = ex.config.fd.use_psor;
    fd_vi_solve(&ex.spec, &cfg)
}

fn sup_diff(ex: &Experiment, oracle: &Oracle, points: &[(f64, usize, f64)]) -> Result<f64> {
    let diffs: Vec<f64> = points
        .par_iter()
        .map(|&(t, node, v)| {
            let x = ex.grid.node(node);
            oracle.eval(ex, t, &x[..ex.spec.dim]).map(|r| (r - v).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

fn run_delta(ex: &Experiment, oracle: &Oracle, delta: f64) -> Result<ConvergenceRow> {
    let sol = solve(&ex.spec, delta, &ex.grid, &ex.operator)?;
    let nodes = ex.region.nodes(&ex.grid);
    let mut points = Vec::new();
    for (t, slice) in sol.slices.times.iter().zip(&sol.slices.slices) {
        if ex.region.contains_time(*t) {
            points.extend(nodes.iter().map(|&n| (*t, n, slice.values[n])));
        }
    }
    let sup_error = sup_diff(ex, oracle, &points)?;

    let horizon = ex.spec.horizon;
    let step = horizon - sol.times()[1];
    let mut last = Vec::new();
    for j in 1..=LAST_INTERVAL_SAMPLES {
        let t = horizon - step * j as f64 / LAST_INTERVAL_SAMPLES as f64;
        for &n in &nodes {
            let x = ex.grid.node(n);
            last.push((t, n, eval_solution(&sol, t, &x[..ex.spec.dim])?));
        }
    }
    let last_interval_error = sup_diff(ex, oracle, &last)?;
    Ok(ConvergenceRow {
        delta,
        steps: sol.times().len() - 1,
        sup_error,
        last_interval_error,
        last_interval_constant: last_interval_error / delta.sqrt(),
    })
}

/// `Δ`-sweep against the configured oracle with rate fit and verdicts.
pub fn run_convergence(ex: &Experiment) -> Result<ConvergenceReport> {
    let oracle = Oracle::build(ex)?;
    let rows = ex
        .config
        .deltas
        .par_iter()
        .map(|&d| run_delta(ex, &oracle, d))
        .collect::<Result<Vec<_>>>()?;
    let skip = usize::from(ex.config.exclude_coarsest);
    let fit = &rows[skip..];
    let rate = if fit.len() >= 2 && fit.iter().all(|r| r.sup_error > 0.0) {
        let xs: Vec<f64> = fit.iter().map(|r| r.delta.ln()).collect();
        let ys: Vec<f64> = fit.iter().map(|r| r.sup_error.ln()).collect();
        ols_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let mut report = ConvergenceReport {
        oracle: ex.config.oracle,
        rows,
        rate,
        excluded_coarsest: ex.config.exclude_coarsest,
        verdicts: Vec::new(),
    };
    let errs = report
        .rows
        .iter()
        .map(|r| fmt_sci(r.sup_error))
        .collect::<Vec<_>>()
        .join(", ");
    match ex.config.oracle {
        OracleKind::ColeHopf => {
            report.verdicts.push(Verdict::new("rate >= 0.35", rate >= 0.35, format!("rate {rate:.4}")));
            report.verdicts.push(Verdict::new(
                "errors strictly decreasing",
                report.errors_strictly_decreasing(),
                errs,
            ));
        }
        _ => {
            report.verdicts.push(Verdict::new("rate >= 0.10", rate >= 0.10, format!("rate {rate:.4}")));
            report.verdicts.push(Verdict::new("errors nonincreasing", report.errors_nonincreasing(), errs));
        }
    }
    let spread = report.last_interval_spread();
    report.verdicts.push(Verdict::new(
        "last-interval constant within x2",
        spread <= 2.0,
        format!("max/min {spread:.4}"),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    const CFG: &str = r#"
seed = 1
deltas = [0.2, 0.1, 0.05]
oracle = "cole_hopf"

[problem]
name = "smooth_quadratic"
horizon = 0.4

[grid]
lo = [-4.0]
hi = [4.0]
points = 161

[reporting_region]
lo = [-0.3]
hi = [0.3]
"#;

    #[test]
    fn small_sweep_is_sane_and_deterministic() {
        let ex = ExperimentConfig::from_toml_str(CFG).unwrap().build().unwrap();
        let a = run_convergence(&ex).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert!(a.rows.iter().all(|r| r.sup_error > 0.0 && r.sup_error < 0.05));
        assert_eq!(a.verdicts.len(), 3);
        let b = run_convergence(&ex).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn missing_oracle_is_reported() {
        let text = CFG.replace("oracle = \"cole_hopf\"", "oracle = \"none\"");
        let ex = ExperimentConfig::from_toml_str(&text).unwrap().build().unwrap();
        assert!(matches!(run_convergence(&ex), Err(Error::OracleUnavailable(_))));
        let text = CFG.replace("name = \"smooth_quadratic\"", "name = \"capped_cone_obstacle\"");
        let ex = ExperimentConfig::from_toml_str(&text).unwrap().build().unwrap();
        assert!(matches!(run_convergence(&ex), Err(Error::OracleUnavailable(_))));
    }
}
