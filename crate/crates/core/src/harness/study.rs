use std::io::Write;

use crate::error::{Error, Result};
use crate::harness::config::Experiment;
use crate::harness::convergence::Verdict;
use crate::reference::ControlSetApprox;
use crate::switching::{k_sweep, KSweepReport, SwitchingConfig};

/// Lower-gap tolerance between the switching solver and the FD oracle.
pub const GAP_TOLERANCE: f64 = 5e-3;
pub const MIN_SLOPE: f64 = 0.23;
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingStudy {
    pub report: KSweepReport,
    pub verdicts: Vec<Verdict>,
}

impl SwitchingStudy {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.report.rows {
            if r.outside_asymptotic_regime {
                writeln!(out, "note: k = {} is outside the asymptotic regime", r.k)?;
            }
        }
        for v in &self.verdicts {
            writeln!(out, "{}", v.line())?;
        }
        Ok(())
    }
}

/// The `[switching]` table turned into a solver configuration for its first `k`.
pub fn switching_config(ex: &Experiment) -> Result<(SwitchingConfig, Vec<f64>)> {
    let sw = ex
        .config
        .switching
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("a [switching] table is required".into()))?;
    let q_max = sw.q_max.unwrap_or(ex.operator.q_max);
    let mut cfg = SwitchingConfig::new(
        ControlSetApprox::equally_spaced(sw.m, q_max),
        sw.ks[0],
        ex.grid.clone(),
        sw.time_steps,
    );
    cfg.fp_tol = sw.fp_tol;
    cfg.fp_max_iters = sw.fp_max_iters;
    Ok((cfg, sw.ks.clone()))
}

/// k-sweep over the configured costs with the sandwich verdicts.
pub fn run_switching_study(ex: &Experiment) -> Result<SwitchingStudy> {
    let (cfg, ks) = switching_config(ex)?;
    let report = k_sweep(&ex.spec, &cfg, &ks, &ex.region)?;
    let min_gap = report.min_gap();
    let defect = report.rows.iter().map(|r| r.identity_defect).fold(0.0, f64::max);
    let gaps = report
        .rows
        .iter()
        .map(|r| format!("{:.4e}", r.max_gap))
        .collect::<Vec<_>>()
        .join(", ");
    let verdicts = vec![
        Verdict::new(
            "min gap >= -5e-3",
            min_gap >= -GAP_TOLERANCE,
            format!("min gap {min_gap:.4e}"),
        ),
        Verdict::new("max gap nonincreasing in k", report.max_gap_nonincreasing(), gaps),
        Verdict::new(
            "slope >= 0.23",
            report.slope >= MIN_SLOPE,
            format!("slope {:.4}", report.slope),
        ),
        Verdict::new(
            "stop-component identity to 1e-10",
            defect <= IDENTITY_TOL,
            format!("defect {defect:.3e}"),
        ),
    ];
    Ok(SwitchingStudy { report, verdicts })
}
