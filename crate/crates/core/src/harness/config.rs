//! Experiment configuration files (TOML).
//!
//! Every table rejects unknown keys. A `[problem]` table may name a registry
//! entry and override any of its fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ReportingRegion, SpatialGrid};
use crate::hamiltonian::{effective_control_bound, HamiltonianKind, Obstacle, ProblemSpec, Vector};
use crate::harness::registry::FunctionSpec;
use crate::operator::OperatorConfig;
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    ColeHopf,
    FdVi,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianConfig {
    /// `c|p|²/2`
    Quadratic { c: f64 },
    /// `c|p|^m/m`
    Power { m: u32, c: f64 },
}

impl HamiltonianConfig {
    fn kind(self) -> HamiltonianKind {
        match self {
            HamiltonianConfig::Quadratic { c } => HamiltonianKind::QuadraticIso { c },
            HamiltonianConfig::Power { m, c } => HamiltonianKind::PowerIso { m, c },
        }
    }
}

/// `[problem]`: a registry name plus overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: Option<String>,
    pub dim: Option<usize>,
    pub horizon: Option<f64>,
    /// Isotropic constant diffusion coefficient.
    pub sigma: Option<f64>,
    /// Constant drift vector.
    pub drift: Option<Vec<f64>>,
    pub hamiltonian: Option<HamiltonianConfig>,
    pub terminal: Option<FunctionSpec>,
    pub obstacle: Option<FunctionSpec>,
    /// Drops the registry entry's obstacle.
    #[serde(default)]
    pub without_obstacle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub t_min: f64,
    /// Defaults to the horizon.
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSettings {
    pub quad_order: usize,
    pub coarse_candidates: usize,
    pub refine_iters: usize,
    /// Overrides the probed control bound.
    pub q_max: Option<f64>,
    /// Gradient probe radius; defaults to the largest data Lipschitz constant.
    pub p_probe: Option<f64>,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        OperatorSettings {
            quad_order: 7,
            coarse_candidates: 17,
            refine_iters: 60,
            q_max: None,
            p_probe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdSettings {
    /// Spatial refinement factor over the scheme grid.
    pub refinement: usize,
    /// FD time steps per finest `Δ`.
    pub time_refinement: usize,
    pub control_points: Option<usize>,
    pub use_psor: bool,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings {
            refinement: 4,
            time_refinement: 4,
            control_points: None,
            use_psor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSettings {
    /// Number of equally spaced controls in `[−q_max, q_max]`.
    pub m: usize,
    /// Switching costs, strictly decreasing.
    pub ks: Vec<f64>,
    pub time_steps: usize,
    /// Defaults to the operator's control bound.
    pub q_max: Option<f64>,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iters")]
    pub fp_max_iters: usize,
}

fn default_fp_tol() -> f64 {
    1e-10
}

fn default_fp_max_iters() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub oracle: OracleKind,
    /// Leave the coarsest `Δ` out of the rate fit.
    #[serde(default)]
    pub exclude_coarsest: bool,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub reporting_region: RegionConfig,
    #[serde(default)]
    pub operator: OperatorSettings,
    #[serde(default)]
    pub fd: FdSettings,
    pub switching: Option<SwitchingSettings>,
}

/// Fully resolved problem and data descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedProblem {
    pub dim: usize,
    pub horizon: f64,
    pub sigma: f64,
    pub drift: Vec<f64>,
    pub hamiltonian: HamiltonianConfig,
    pub terminal: FunctionSpec,
    pub obstacle: Option<FunctionSpec>,
}

impl ResolvedProblem {
    pub fn spec(&self) -> ProblemSpec {
        let terminal = self.terminal.clone();
        let lip = self.data_lipschitz();
        let mut spec = ProblemSpec::new(self.dim, self.hamiltonian.kind(), move |x| terminal.eval(x), self.horizon)
            .with_sigma(self.sigma)
            .with_drift(&self.drift)
            .with_lipschitz(lip.max(self.sigma.abs()).max(1.0));
        if let Some(f) = &self.obstacle {
            spec = spec.with_obstacle(f.to_obstacle());
        } else {
            spec = spec.with_obstacle(Obstacle::None);
        }
        spec
    }

    pub fn data_lipschitz(&self) -> f64 {
        let f = self.obstacle.as_ref().map_or(0.0, |f| f.lipschitz());
        self.terminal.lipschitz().max(f)
    }
}

/// Names accepted by `problem.name`.
pub const REGISTRY: [&str; 3] = ["smooth_quadratic", "kinked_quadratic", "capped_cone_obstacle"];

fn registry_entry(name: &str) -> Result<ResolvedProblem> {
    let base = ResolvedProblem {
        dim: 1,
        horizon: 1.0,
        sigma: 0.3,
        drift: vec![0.0],
        hamiltonian: HamiltonianConfig::Quadratic { c: 1.0 },
        terminal: FunctionSpec::Constant { value: 0.0 },
        obstacle: None,
    };
    match name {
        // curvature large against slope, so the O(Δ) splitting error
        // dominates the accumulated interpolation error on coarse grids
        "smooth_quadratic" => Ok(ResolvedProblem {
            horizon: 0.5,
            sigma: 0.5,
            terminal: FunctionSpec::GaussianBump {
                center: vec![0.0],
                amplitude: 0.4,
                width: 0.15,
                offset: 0.0,
            },
            ..base
        }),
        "kinked_quadratic" => Ok(ResolvedProblem {
            terminal: FunctionSpec::CappedCone {
                center: vec![0.0],
                scale: 0.5,
                cap: 1.0,
                offset: 0.0,
            },
            ..base
        }),
        "capped_cone_obstacle" => Ok(ResolvedProblem {
            terminal: FunctionSpec::CappedCone {
                center: vec![0.0],
                scale: 0.5,
                cap: 1.0,
                offset: 0.0,
            },
            obstacle: Some(FunctionSpec::CappedCone {
                center: vec![0.0],
                scale: 0.5,
                cap: 1.0,
                offset: 0.05,
            }),
            ..base
        }),
        other => Err(Error::InvalidConfig(format!(
            "unknown problem '{other}', expected one of {REGISTRY:?}"
        ))),
    }
}

impl ProblemConfig {
    pub fn resolve(&self) -> Result<ResolvedProblem> {
        let mut p = match &self.name {
            Some(name) => registry_entry(name)?,
            None => {
                let dim = self.dim.unwrap_or(1);
                ResolvedProblem {
                    dim,
                    horizon: self.horizon.ok_or_else(|| missing("problem.horizon"))?,
                    sigma: self.sigma.ok_or_else(|| missing("problem.sigma"))?,
                    drift: vec![0.0; dim],
                    hamiltonian: self.hamiltonian.ok_or_else(|| missing("problem.hamiltonian"))?,
                    terminal: self.terminal.clone().ok_or_else(|| missing("problem.terminal"))?,
                    obstacle: None,
                }
            }
        };
        if let Some(d) = self.dim {
            if d != p.dim {
                p.drift = vec![0.0; d];
            }
            p.dim = d;
        }
        if let Some(v) = self.horizon {
            p.horizon = v;
        }
        if let Some(v) = self.sigma {
            p.sigma = v;
        }
        if let Some(v) = &self.drift {
            p.drift = v.clone();
        }
        if let Some(v) = self.hamiltonian {
            p.hamiltonian = v;
        }
        if let Some(v) = &self.terminal {
            p.terminal = v.clone();
        }
        if let Some(v) = &self.obstacle {
            p.obstacle = Some(v.clone());
        }
        if self.without_obstacle {
            p.obstacle = None;
        }
        if !(1..=2).contains(&p.dim) || p.drift.len() != p.dim {
            return Err(Error::InvalidConfig(format!(
                "dimension {} with drift of length {} is not supported",
                p.dim,
                p.drift.len()
            )));
        }
        p.terminal.check(p.dim)?;
        if let Some(f) = &p.obstacle {
            f.check(p.dim)?;
        }
        Ok(p)
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidConfig(format!("{key} is required when problem.name is absent"))
}

/// A validated configuration with everything derived from it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ResolvedProblem,
    pub spec: ProblemSpec,
    pub grid: SpatialGrid,
    pub region: ReportingRegion,
    pub operator: OperatorConfig,
    /// Gradient radius the control bound was probed with.
    pub p_probe: f64,
    /// Minimum distance between the reporting box and the grid boundary.
    pub margin: f64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Resolves the problem, checks every invariant and derives the
    /// operator settings.
    pub fn build(&self) -> Result<Experiment> {
        let problem = self.problem.resolve()?;
        let spec = problem.spec();
        let horizon = spec.horizon;
        if self.deltas.is_empty() {
            return Err(Error::InvalidConfig("deltas must not be empty".into()));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d < horizon)) {
            return Err(Error::InvalidConfig(format!("every delta must lie in (0, {horizon})")));
        }
        if self.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("deltas must be strictly decreasing".into()));
        }
        if self.exclude_coarsest && self.deltas.len() < 3 {
            return Err(Error::InvalidConfig("exclude_coarsest needs at least three deltas".into()));
        }
        let g = &self.grid;
        if g.lo.len() != problem.dim || g.hi.len() != problem.dim {
            return Err(Error::InvalidConfig("grid bounds must match the problem dimension".into()));
        }
        let grid = SpatialGrid::new(&g.lo, &g.hi, g.points)?;
        let nodes: Vec<Vector> = grid.nodes().collect();
        spec.validate(nodes.iter())?;

        let p_probe = self
            .operator
            .p_probe
            .unwrap_or_else(|| problem.data_lipschitz().max(1e-3));
        let q_max = match self.operator.q_max {
            Some(q) => q,
            None => effective_control_bound(&spec, p_probe, &[])?,
        };
        let operator = OperatorConfig {
            quad: QuadratureRule::gauss_hermite(self.operator.quad_order, problem.dim)?,
            q_max,
            coarse_candidates: self.operator.coarse_candidates,
            refine_iters: self.operator.refine_iters,
            interp: Default::default(),
        };
        operator.check()?;

        let r = &self.reporting_region;
        let region = ReportingRegion {
            lo: r.lo.clone(),
            hi: r.hi.clone(),
            t_min: r.t_min,
            t_max: r.t_max.unwrap_or(horizon),
        };
        if region.lo.len() != problem.dim || region.hi.len() != problem.dim {
            return Err(Error::InvalidConfig("reporting region must match the problem dimension".into()));
        }
        if !(0.0..=horizon).contains(&region.t_min) || region.t_max > horizon || region.t_min > region.t_max {
            return Err(Error::InvalidConfig(format!(
                "reporting window [{}, {}] must lie in [0, {horizon}]",
                region.t_min, region.t_max
            )));
        }
        let margin = q_max * horizon + 6.0 * problem.sigma.abs() * horizon.sqrt();
        for a in 0..problem.dim {
            if region.lo[a] > region.hi[a]
                || region.lo[a] - grid.lo()[a] < margin
                || grid.hi()[a] - region.hi[a] < margin
            {
                return Err(Error::InvalidConfig(format!(
                    "reporting region [{}, {}] on axis {a} must sit at least {margin:.4} inside the grid [{}, {}]",
                    region.lo[a],
                    region.hi[a],
                    grid.lo()[a],
                    grid.hi()[a]
                )));
            }
        }
        if self.fd.refinement == 0 || self.fd.time_refinement == 0 {
            return Err(Error::InvalidConfig("fd refinement factors must be positive".into()));
        }
        if let Some(sw) = &self.switching {
            if problem.dim != 1 {
                return Err(Error::InvalidConfig("switching studies are one-dimensional".into()));
            }
            if sw.m == 0 || sw.m > crate::switching::MAX_COMPONENTS {
                return Err(Error::InvalidConfig(format!("switching.m must lie in 1..=8, got {}", sw.m)));
            }
            if sw.ks.is_empty() || sw.ks.iter().any(|k| !(*k > 0.0)) || sw.ks.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::InvalidConfig("switching.ks must be positive and strictly decreasing".into()));
            }
        }
        Ok(Experiment {
            config: self.clone(),
            problem,
            spec,
            grid,
            region,
            operator,
            p_probe,
            margin,
        })
    }
}
