//! Implicit finite-difference solvers for the obstacle HJB problem in control form
//!
//! ```text
//! max{ -u_t + sup_{q∈K} [ -½ tr(σσᵀD²u) - (b - q)·Du - L(q) ],  u - f } = 0
//! ```
//!
//! Drift terms use central differences where that keeps the step matrix an
//! M-matrix and one-sided upwind differences otherwise. Each implicit step is
//! a complementarity problem solved by policy iteration over (control, stop).

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpatialGrid};
use crate::hamiltonian::{legendre, ProblemSpec, Vector, MAX_DIM};
use crate::scheme::TimeSlices;

/// Settings of the finite-difference oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct FDSolverConfig {
    pub time_steps: usize,
    pub grid: SpatialGrid,
    pub psor_tol: f64,
    pub psor_max_iters: usize,
    /// 1 is implicit Euler, ½ is Crank–Nicolson.
    pub theta: f64,
    /// Radius of the discretized control set `K`.
    pub q_max: f64,
    /// Control points per axis in `K` for [`fd_vi_solve`].
    pub control_points: usize,
    /// Solve each step by projected nodewise Gauss–Seidel instead of policy iteration.
    pub use_psor: bool,
}

impl FDSolverConfig {
    pub fn new(grid: SpatialGrid, time_steps: usize, q_max: f64) -> Self {
        let control_points = if grid.dim() == 1 { 201 } else { 21 };
        FDSolverConfig {
            time_steps,
            grid,
            psor_tol: 1e-10,
            psor_max_iters: 10_000,
            theta: 1.0,
            q_max,
            control_points,
            use_psor: false,
        }
    }

    fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::InvalidConfig("time_steps must be positive".into()));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!(
                "theta must lie in [1/2, 1], got {}",
                self.theta
            )));
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
}

/// Finite control set `K_m = {q_1, …, q_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSetApprox {
    pub controls: Vec<Vector>,
}

impl ControlSetApprox {
    /// `m` equally spaced 1D controls in `[−q_max, q_max]` (`{0}` for `m = 1`).
    pub fn equally_spaced(m: usize, q_max: f64) -> Self {
        let controls = if m == 1 {
            vec![[0.0, 0.0]]
        } else {
            (0..m)
                .map(|i| [-q_max + 2.0 * q_max * i as f64 / (m - 1) as f64, 0.0])
                .collect()
        };
        ControlSetApprox { controls }
    }

    /// First `m` points of the dyadic sequence `0, −q, q, −q/2, q/2, −3q/4, …`,
    /// so that `K_m ⊂ K_{m'}` for `m < m'`.
    pub fn nested(m: usize, q_max: f64) -> Self {
        let mut seq: Vec<f64> = vec![0.0, -q_max, q_max];
        let mut level = 1;
        while seq.len() < m {
            let denom = (1u64 << level) as f64;
            for j in 0..(1u64 << level) {
                let k = 2 * j + 1;
                let v = -q_max + 2.0 * q_max * k as f64 / (2.0 * denom);
                if v != 0.0 {
                    seq.push(v);
                }
            }
            level += 1;
        }
        seq.truncate(m);
        ControlSetApprox {
            controls: seq.into_iter().map(|q| [q, 0.0]).collect(),
        }
    }

    /// Tensor grid with `points` per axis over `[−q_max, q_max]^dim`.
    pub fn uniform_grid(dim: usize, points: usize, q_max: f64) -> Self {
        let axis = Self::equally_spaced(points, q_max);
        if dim == 1 {
            return axis;
        }
        let mut controls = Vec::with_capacity(points * points);
        for a in &axis.controls {
            for b in &axis.controls {
                controls.push([a[0], b[0]]);
            }
        }
        ControlSetApprox { controls }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn contains(&self, q: &Vector) -> bool {
        self.controls.iter().any(|c| (c[0] - q[0]).abs() < 1e-14 && (c[1] - q[1]).abs() < 1e-14)
    }
}

/// Output of the finite-difference oracles.
#[derive(Debug, Clone)]
pub struct FdReference {
    pub slices: TimeSlices,
    /// Nodes (summed over steps) where the selected control sits on the
    /// boundary of `K` in the continuation region.
    pub saturated_nodes: usize,
    pub max_policy_iterations: usize,
    /// Largest complementarity residual over all steps and nodes.
    pub max_residual: f64,
}

/// A linear operator row `(A u)_i = diag·u_i + Σ off_j·u_j` plus running cost.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Row {
    pub diag: f64,
    pub off: [(usize, f64); 2 * MAX_DIM],
    pub n_off: usize,
    pub cost: f64,
}

impl Row {
    fn apply(&self, u: &[f64], i: usize) -> f64 {
        let mut s = self.diag * u[i];
        for &(j, c) in &self.off[..self.n_off] {
            s += c * u[j];
        }
        s
    }
}

/// Rows of `−½ tr(σσᵀD²) − (b − q)·D` for every (node, control) at one time.
pub(crate) struct RowTable {
    pub rows: Vec<Row>,
    pub n_controls: usize,
}

impl RowTable {
    pub fn build(spec: &ProblemSpec, grid: &SpatialGrid, t: f64, controls: &[Vector], costs: &CostTable) -> Result<Self> {
        let n = grid.dim();
        let h = grid.spacing();
        let pts = grid.points_per_axis();
        let mut rows = Vec::with_capacity(grid.len() * controls.len());
        for node in 0..grid.len() {
            let x = grid.node(node);
            let b = spec.drift.eval(t, &x[..n]);
            let s = spec.sigma.eval(t, &x[..n]);
            let mut a = [0.0; MAX_DIM];
            for i in 0..n {
                for j in 0..spec.noise_dim {
                    a[i] += s[i][j] * s[i][j];
                }
            }
            if n == 2 {
                let cross: f64 = (0..spec.noise_dim).map(|j| s[0][j] * s[1][j]).sum();
                if cross.abs() > 1e-12 {
                    return Err(Error::UnsupportedProblem(
                        "finite-difference oracle needs diagonal σσᵀ in 2D".into(),
                    ));
                }
            }
            let idx = grid.multi_index(node);
            for (ci, q) in controls.iter().enumerate() {
                let mut row = Row {
                    diag: 0.0,
                    off: [(0, 0.0); 2 * MAX_DIM],
                    n_off: 0,
                    cost: costs.get(node, ci),
                };
                for axis in 0..n {
                    let beta = b[axis] - q[axis];
                    let hh = h[axis];
                    // coefficients of u_{-}, u_i, u_{+} along this axis
                    let diff = 0.5 * a[axis] / (hh * hh);
                    let (mut cm, mut c0, mut cp) = (-diff, 2.0 * diff, -diff);
                    if beta.abs() * hh <= a[axis] {
                        cm += beta / (2.0 * hh);
                        cp -= beta / (2.0 * hh);
                    } else if beta > 0.0 {
                        c0 += beta / hh;
                        cp -= beta / hh;
                    } else {
                        c0 -= beta / hh;
                        cm += beta / hh;
                    }
                    // reflecting ghost nodes at the box boundary
                    let i = idx[axis];
                    let neighbor = |offset: isize| {
                        let mut k = idx;
                        let target = i as isize + offset;
                        let reflected = if target < 0 {
                            1
                        } else if target >= pts as isize {
                            pts as isize - 2
                        } else {
                            target
                        };
                        k[axis] = reflected as usize;
                        grid.flat_index(k)
                    };
                    let jm = neighbor(-1);
                    let jp = neighbor(1);
                    row.diag += c0;
                    for (j, c) in [(jm, cm), (jp, cp)] {
                        if c == 0.0 {
                            continue;
                        }
                        if let Some(slot) = row.off[..row.n_off].iter_mut().find(|e| e.0 == j) {
                            slot.1 += c;
                        } else {
                            row.off[row.n_off] = (j, c);
                            row.n_off += 1;
                        }
                    }
                }
                rows.push(row);
            }
        }
        Ok(RowTable {
            rows,
            n_controls: controls.len(),
        })
    }

    #[inline]
    fn row(&self, node: usize, control: usize) -> &Row {
        &self.rows[node * self.n_controls + control]
    }
}

/// `L(t, x_node, q_c)` for every (node, control); a single row when the
/// problem is homogeneous.
pub(crate) struct CostTable {
    values: Vec<f64>,
    n_controls: usize,
    homogeneous: bool,
}

impl CostTable {
    pub fn build(spec: &ProblemSpec, grid: &SpatialGrid, t: f64, controls: &[Vector]) -> Result<Self> {
        let n = grid.dim();
        let homogeneous = spec.is_homogeneous();
        let nodes = if homogeneous { 1 } else { grid.len() };
        let mut values = Vec::with_capacity(nodes * controls.len());
        for node in 0..nodes {
            let x = grid.node(node);
            for q in controls {
                values.push(legendre(spec, t, &x[..n], &q[..n])?.value);
            }
        }
        Ok(CostTable {
            values,
            n_controls: controls.len(),
            homogeneous,
        })
    }

    #[inline]
    fn get(&self, node: usize, control: usize) -> f64 {
        if self.homogeneous {
            self.values[control]
        } else {
            self.values[node * self.n_controls + control]
        }
    }
}

/// Per-node policy: a control index or stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Policy {
    Control(usize),
    Stop,
}

/// One implicit step: find `u` with `max{ max_c F_c(u)_i, u_i − obstacle_i } = 0`,
/// `F_c(u)_i = u_i − prev_i + Δt[θ(A_c u)_i + (1−θ)(A_c prev)_i − L_c]`.
pub(crate) struct StepSystem<'a> {
    pub grid: &'a SpatialGrid,
    pub prev: &'a [f64],
    pub dt: f64,
    pub theta: f64,
    pub table: &'a RowTable,
    pub obstacle: &'a [f64],
}

impl StepSystem<'_> {
    #[inline]
    fn control_residual(&self, u: &[f64], i: usize, c: usize) -> f64 {
        let row = self.table.row(i, c);
        let mut r = u[i] - self.prev[i] + self.dt * (self.theta * row.apply(u, i) - row.cost);
        if self.theta < 1.0 {
            r += self.dt * (1.0 - self.theta) * row.apply(self.prev, i);
        }
        r
    }

    fn best_policy(&self, u: &[f64], i: usize, current: Policy) -> (Policy, f64) {
        let mut best = Policy::Stop;
        let mut best_val = u[i] - self.obstacle[i];
        for c in 0..self.table.n_controls {
            let r = self.control_residual(u, i, c);
            if r > best_val {
                best_val = r;
                best = Policy::Control(c);
            }
        }
        // keep the current policy on (near) ties so the iteration cannot cycle
        let cur_val = match current {
            Policy::Stop => u[i] - self.obstacle[i],
            Policy::Control(c) => self.control_residual(u, i, c),
        };
        if cur_val >= best_val - 1e-13 * (1.0 + best_val.abs()) {
            (current, best_val)
        } else {
            (best, best_val)
        }
    }

    pub fn residual(&self, u: &[f64]) -> f64 {
        (0..u.len())
            .map(|i| self.best_policy(u, i, Policy::Stop).1.abs())
            .fold(0.0, f64::max)
    }

    /// Howard's algorithm. Returns the solution, the final policy and the
    /// iteration count.
    pub fn solve_policy_iteration(&self, guess: &[f64], tol: f64, max_iters: usize, t: f64) -> Result<(Vec<f64>, Vec<Policy>, usize)> {
        let nn = guess.len();
        let mut u = guess.to_vec();
        let mut policy = vec![Policy::Stop; nn];
        for (i, p) in policy.iter_mut().enumerate() {
            *p = self.best_policy(&u, i, Policy::Stop).0;
        }
        for iter in 1..=max_iters {
            u = self.solve_linear(&policy, &u, tol)?;
            let mut changed = false;
            for i in 0..nn {
                let (p, _) = self.best_policy(&u, i, policy[i]);
                if p != policy[i] {
                    policy[i] = p;
                    changed = true;
                }
            }
            if !changed {
                return Ok((u, policy, iter));
            }
        }
        Err(Error::PolicyIterationDiverged {
            iterations: max_iters,
            t,
        })
    }

    /// Projected nodewise Gauss–Seidel. Each `F_c(u)_i` is increasing in
    /// `u_i`, so the nodewise root is the minimum over controls of the
    /// individual linear roots, capped by the obstacle.
    pub fn solve_psor(&self, guess: &[f64], tol: f64, max_iters: usize, t: f64) -> Result<(Vec<f64>, Vec<Policy>, usize)> {
        let nn = guess.len();
        let mut u = guess.to_vec();
        for iter in 1..=max_iters {
            let mut change = 0.0_f64;
            for i in 0..nn {
                let mut best = self.obstacle[i];
                for c in 0..self.table.n_controls {
                    let row = self.table.row(i, c);
                    let slope = 1.0 + self.dt * self.theta * row.diag;
                    let r = self.control_residual(&u, i, c);
                    let root = u[i] - r / slope;
                    if root < best {
                        best = root;
                    }
                }
                change = change.max((best - u[i]).abs());
                u[i] = best;
            }
            if change <= tol {
                let policy = (0..nn).map(|i| self.best_policy(&u, i, Policy::Stop).0).collect();
                return Ok((u, policy, iter));
            }
        }
        Err(Error::PolicyIterationDiverged {
            iterations: max_iters,
            t,
        })
    }

    fn solve_linear(&self, policy: &[Policy], guess: &[f64], tol: f64) -> Result<Vec<f64>> {
        let nn = policy.len();
        // rhs and rows of the linear system for the fixed policy
        let mut rhs = vec![0.0; nn];
        for i in 0..nn {
            rhs[i] = match policy[i] {
                Policy::Stop => self.obstacle[i],
                Policy::Control(c) => {
                    let row = self.table.row(i, c);
                    let mut r = self.prev[i] + self.dt * row.cost;
                    if self.theta < 1.0 {
                        r -= self.dt * (1.0 - self.theta) * row.apply(self.prev, i);
                    }
                    r
                }
            };
        }
        if self.grid.dim() == 1 {
            // tridiagonal: neighbors are i ± 1 (reflected at the ends)
            let mut lower = vec![0.0; nn];
            let mut diag = vec![0.0; nn];
            let mut upper = vec![0.0; nn];
            for i in 0..nn {
                match policy[i] {
                    Policy::Stop => diag[i] = 1.0,
                    Policy::Control(c) => {
                        let row = self.table.row(i, c);
                        diag[i] = 1.0 + self.dt * self.theta * row.diag;
                        for &(j, v) in &row.off[..row.n_off] {
                            let v = self.dt * self.theta * v;
                            if j + 1 == i {
                                lower[i] += v;
                            } else if j == i + 1 {
                                upper[i] += v;
                            } else {
                                unreachable!("non-tridiagonal row");
                            }
                        }
                    }
                }
            }
            return Ok(thomas(&lower, &diag, &upper, &rhs));
        }
        // 2D: Gauss–Seidel on the strictly diagonally dominant M-matrix
        let mut u = guess.to_vec();
        for _ in 0..100_000 {
            let mut change = 0.0_f64;
            for i in 0..nn {
                let v = match policy[i] {
                    Policy::Stop => rhs[i],
                    Policy::Control(c) => {
                        let row = self.table.row(i, c);
                        let mut s = rhs[i];
                        for &(j, a) in &row.off[..row.n_off] {
                            s -= self.dt * self.theta * a * u[j];
                        }
                        s / (1.0 + self.dt * self.theta * row.diag)
                    }
                };
                change = change.max((v - u[i]).abs());
                u[i] = v;
            }
            if change <= 1e-3 * tol {
                return Ok(u);
            }
        }
        Err(Error::PolicyIterationDiverged {
            iterations: 100_000,
            t: f64::NAN,
        })
    }
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Reference solution of the obstacle problem with `K` the uniform control
/// grid of radius `cfg.q_max`.
pub fn fd_vi_solve(spec: &ProblemSpec, cfg: &FDSolverConfig) -> Result<FdReference> {
    let controls = ControlSetApprox::uniform_grid(spec.dim, cfg.control_points, cfg.q_max);
    fd_hjb_finite_controls(spec, &controls, cfg)
}

/// Reference solution `u^m` with the control supremum restricted to `K_m`.
pub fn fd_hjb_finite_controls(
    spec: &ProblemSpec,
    controls: &ControlSetApprox,
    cfg: &FDSolverConfig,
) -> Result<FdReference> {
    cfg.check(spec)?;
    if controls.is_empty() {
        return Err(Error::InvalidConfig("empty control set".into()));
    }
    let grid = &cfg.grid;
    let n = grid.dim();
    let dt = spec.horizon / cfg.time_steps as f64;
    let nodes: Vec<Vector> = grid.nodes().collect();
    let terminal: Vec<f64> = nodes.iter().map(|x| spec.terminal_at(&x[..n])).collect();
    let boundary: Vec<bool> = controls
        .controls
        .iter()
        .map(|q| (0..n).any(|a| q[a].abs() >= cfg.q_max * (1.0 - 1e-12)))
        .collect();

    let mut times = vec![spec.horizon];
    let mut slices = vec![GridFunction::new(grid.clone(), terminal, spec.lipschitz_m)?];
    let mut costs = CostTable::build(spec, grid, spec.horizon, &controls.controls)?;
    let mut saturated = 0;
    let mut max_iters = 0;
    let mut max_residual = 0.0_f64;
    for k in 1..=cfg.time_steps {
        let t = if k == cfg.time_steps { 0.0 } else { spec.horizon - k as f64 * dt };
        if !spec.is_homogeneous() {
            costs = CostTable::build(spec, grid, t, &controls.controls)?;
        }
        let table = RowTable::build(spec, grid, t, &controls.controls, &costs)?;
        let obstacle: Vec<f64> = nodes.iter().map(|x| spec.obstacle_at(t, &x[..n])).collect();
        let prev = &slices.last().unwrap().values;
        let system = StepSystem {
            grid,
            prev,
            dt,
            theta: cfg.theta,
            table: &table,
            obstacle: &obstacle,
        };
        let (u, policy, iters) = if cfg.use_psor {
            system.solve_psor(prev, cfg.psor_tol, cfg.psor_max_iters, t)?
        } else {
            system.solve_policy_iteration(prev, cfg.psor_tol, cfg.psor_max_iters, t)?
        };
        max_iters = max_iters.max(iters);
        max_residual = max_residual.max(system.residual(&u));
        saturated += policy
            .iter()
            .filter(|p| matches!(p, Policy::Control(c) if boundary[*c]))
            .count();
        times.push(t);
        slices.push(GridFunction::new(grid.clone(), u, spec.lipschitz_m)?);
    }
    Ok(FdReference {
        slices: TimeSlices { times, slices },
        saturated_nodes: saturated,
        max_policy_iterations: max_iters,
        max_residual,
    })
}
