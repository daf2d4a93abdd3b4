use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use splitvi_core::harness::config::{Experiment, ExperimentConfig, OracleKind};
use splitvi_core::harness::{fd_oracle, run_convergence, run_property_suite, run_switching_study, PropertyOptions};
use splitvi_core::reference::cole_hopf_reference;
use splitvi_core::scheme::{solve, time_grid};
use splitvi_core::grid::fmt_sci;

#[derive(Parser)]
#[command(name = "splitvi", version, about = "Splitting scheme experiments for obstacle HJB problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scheme once and write every time slice.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Time step; defaults to the finest configured delta.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Delta sweep against the configured oracle.
    Converge(Common),
    /// Invariant suites.
    Properties(Common),
    /// Switching-cost sweep.
    Switching(Common),
    /// Evaluate the configured reference solver on the scheme grid.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results never depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Leave the coarsest delta out of the rate fit.
    #[arg(long)]
    exclude_coarsest: bool,
}

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.exclude_coarsest {
            cfg.exclude_coarsest = true;
        }
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg.build()?)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Writes `text` to `dir/name` and echoes it to stdout.
fn emit(dir: &Path, name: &str, text: &[u8]) -> Result<()> {
    let mut f = create(dir, name)?;
    f.write_all(text)?;
    f.flush()?;
    io::stdout().write_all(text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { common, delta } => {
            let ex = common.experiment()?;
            let delta = delta.unwrap_or(*ex.config.deltas.last().unwrap());
            let sol = solve(&ex.spec, delta, &ex.grid, &ex.operator)?;
            let mut f = create(&common.out, "solution.csv")?;
            sol.write_csv(&mut f)?;
            f.flush()?;
            println!("wrote {} slices to {}", sol.times().len(), common.out.join("solution.csv").display());
            Ok(true)
        }
        Command::Converge(common) => {
            let ex = common.experiment()?;
            let report = run_convergence(&ex)?;
            let mut f = create(&common.out, "convergence.csv")?;
            report.write_csv(&mut f)?;
            f.flush()?;
            let mut text = Vec::new();
            report.write_text(&mut text)?;
            emit(&common.out, "convergence.txt", &text)?;
            Ok(report.all_passed())
        }
        Command::Properties(common) => {
            let ex = common.experiment()?;
            let report = run_property_suite(&ex, &PropertyOptions::default());
            let mut text = Vec::new();
            report.write_text(&mut text)?;
            emit(&common.out, "properties.txt", &text)?;
            Ok(report.all_passed())
        }
        Command::Switching(common) => {
            let ex = common.experiment()?;
            let study = run_switching_study(&ex)?;
            let mut f = create(&common.out, "k_sweep.csv")?;
            study.report.write_csv(&mut f)?;
            f.flush()?;
            let mut text = Vec::new();
            study.write_text(&mut text)?;
            emit(&common.out, "switching.txt", &text)?;
            Ok(study.all_passed())
        }
        Command::Oracle(common) => {
            let ex = common.experiment()?;
            let mut f = create(&common.out, "oracle.csv")?;
            match ex.config.oracle {
                OracleKind::ColeHopf => {
                    let finest = *ex.config.deltas.last().unwrap();
                    let n = ex.spec.dim;
                    let axes = ["x0", "x1"];
                    writeln!(f, "t,{},value", axes[..n].join(","))?;
                    for t in time_grid(ex.spec.horizon, finest)? {
                        for node in ex.grid.nodes() {
                            let v = cole_hopf_reference(&ex.spec, t, &node[..n])?;
                            let xs: Vec<String> = node[..n].iter().map(|x| fmt_sci(*x)).collect();
                            writeln!(f, "{},{},{}", fmt_sci(t), xs.join(","), fmt_sci(v))?;
                        }
                    }
                }
                OracleKind::FdVi => {
                    let fd = fd_oracle(&ex)?;
                    fd.slices.write_csv(&mut f)?;
                    println!(
                        "max complementarity residual {:.3e}, saturated nodes {}",
                        fd.max_residual, fd.saturated_nodes
                    );
                }
                OracleKind::None => bail!("the config names no oracle"),
            }
            f.flush()?;
            println!("wrote {}", common.out.join("oracle.csv").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
