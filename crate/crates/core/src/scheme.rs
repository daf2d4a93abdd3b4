//! Backward time marching with the obstacle cap.
//!
//! `u(t_k) = min{ S_{t_k}(Δ) u(t_{k−1}), f(t_k, ·) }` from `u(T) = U`, with
//! linear interpolation in time between stored slices.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{fmt_sci, GridFunction, SpatialGrid};
use crate::hamiltonian::ProblemSpec;
use crate::operator::{apply, apply_slice, OperatorConfig};

/// A family of grid slices at descending times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlices {
    pub times: Vec<f64>,
    pub slices: Vec<GridFunction>,
}

impl TimeSlices {
    pub fn grid(&self) -> &SpatialGrid {
        &self.slices[0].grid
    }

    /// Index `k` with `times[k+1] ≤ t ≤ times[k]` and the weight of `times[k]`.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let first = self.times[0];
        let last = *self.times.last().unwrap();
        if t > first + 1e-12 || t < last - 1e-12 {
            return Err(Error::OutOfRange { t, horizon: first });
        }
        if self.times.len() == 1 {
            return Ok((0, 1.0));
        }
        // times are descending
        let k = self
            .times
            .windows(2)
            .position(|w| t >= w[1] - 1e-12)
            .unwrap_or(self.times.len() - 2);
        let (hi, lo) = (self.times[k], self.times[k + 1]);
        let w = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
        Ok((k, w))
    }

    /// Linear in time, multilinear in space.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (k, w) = self.bracket(t)?;
        if w == 1.0 || self.times.len() == 1 {
            return Ok(self.slices[k].eval(x));
        }
        Ok(w * self.slices[k].eval(x) + (1.0 - w) * self.slices[k + 1].eval(x))
    }

    /// Index of a stored time within `1e−9`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() < 1e-9)
    }

    /// Columns `t, x…, value`; time descending, then node order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.grid().dim();
        let axes = ["x0", "x1"];
        writeln!(out, "t,{},value", axes[..dim].join(","))?;
        for (t, slice) in self.times.iter().zip(&self.slices) {
            write_slice_rows(&mut out, &[fmt_sci(*t)], slice)?;
        }
        Ok(())
    }
}

pub(crate) fn write_slice_rows<W: Write>(
    out: &mut W,
    prefix: &[String],
    slice: &GridFunction,
) -> Result<()> {
    let dim = slice.grid.dim();
    for (node, v) in slice.values.iter().enumerate() {
        let x = slice.grid.node(node);
        for p in prefix {
            write!(out, "{p},")?;
        }
        for xi in &x[..dim] {
            write!(out, "{},", fmt_sci(*xi))?;
        }
        writeln!(out, "{}", fmt_sci(*v))?;
    }
    Ok(())
}

/// Descending time grid `T, T−Δ, …, 0`. A leftover shorter than `Δ/10` is
/// merged into the earliest step.
pub fn time_grid(horizon: f64, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) || delta > horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "time step {delta} must lie in (0, {horizon}]"
        )));
    }
    let steps = (horizon / delta + 1e-9).floor() as usize;
    let rem = horizon - steps as f64 * delta;
    let mut times: Vec<f64> = (0..=steps).map(|k| horizon - k as f64 * delta).collect();
    if rem >= delta / 10.0 {
        times.push(0.0);
    } else if let Some(last) = times.last_mut() {
        *last = 0.0;
        if times.len() == 1 {
            times.insert(0, horizon);
        }
    }
    Ok(times)
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct SchemeSolution {
    pub delta: f64,
    pub slices: TimeSlices,
    pub spec: ProblemSpec,
}

impl SchemeSolution {
    pub fn times(&self) -> &[f64] {
        &self.slices.times
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.slices.write_csv(out)
    }
}

/// One capped step: nodewise `min{ S_t(Δ) next, f(t, ·) }`.
pub fn step(
    spec: &ProblemSpec,
    t: f64,
    delta: f64,
    next_slice: &GridFunction,
    cfg: &OperatorConfig,
) -> Result<GridFunction> {
    let mut out = apply_slice(spec, t, delta, next_slice, cfg)?;
    for (node, v) in out.values.iter_mut().enumerate() {
        let x = next_slice.grid.node(node);
        let f = spec.obstacle_at(t, &x[..spec.dim]);
        if f < *v {
            *v = f;
        }
    }
    Ok(out)
}

/// Marches the scheme from `T` down to `0`.
pub fn solve(
    spec: &ProblemSpec,
    delta: f64,
    grid: &SpatialGrid,
    cfg: &OperatorConfig,
) -> Result<SchemeSolution> {
    if grid.dim() != spec.dim {
        return Err(Error::InvalidConfig(format!(
            "grid dimension {} does not match problem dimension {}",
            grid.dim(),
            spec.dim
        )));
    }
    let times = time_grid(spec.horizon, delta)?;
    let terminal = GridFunction::sample(grid, |x| spec.terminal_at(x), spec.lipschitz_m)?;
    let mut slices = Vec::with_capacity(times.len());
    slices.push(terminal);
    for w in times.windows(2) {
        let (t_next, t) = (w[0], w[1]);
        let next = slices.last().unwrap();
        let slice = step(spec, t, t_next - t, next, cfg).map_err(|e| Error::StepFailed {
            t,
            source: Box::new(e),
        })?;
        slices.push(slice);
    }
    Ok(SchemeSolution {
        delta,
        slices: TimeSlices { times, slices },
        spec: spec.clone(),
    })
}

/// `u^Δ(t, x)`. On the last interval this is
/// `ω₁(t)U(x) + ω₂(t)·min{S_{T−Δ}(Δ)U, f(T−Δ, ·)}(x)`.
pub fn eval_solution(sol: &SchemeSolution, t: f64, x: &[f64]) -> Result<f64> {
    let times = &sol.slices.times;
    let horizon = times[0];
    if !(t >= -1e-12 && t <= horizon + 1e-12) {
        return Err(Error::OutOfRange { t, horizon });
    }
    let t1 = times[1];
    if t > t1 {
        let w1 = (t - t1) / (horizon - t1);
        let w2 = (horizon - t) / (horizon - t1);
        return Ok(w1 * sol.spec.terminal_at(x) + w2 * sol.slices.slices[1].eval(x));
    }
    sol.slices.eval(t, x)
}

/// `S̄(Δ,t,x,p,v) = max{ (p − S_t(Δ)v(x))/Δ, p − f(t,x) }`.
#[allow(clippy::too_many_arguments)]
pub fn residual_sbar(
    spec: &ProblemSpec,
    delta: f64,
    t: f64,
    x: &[f64],
    p: f64,
    v: &GridFunction,
    cfg: &OperatorConfig,
) -> Result<f64> {
    let (s, _) = apply(spec, t, delta, v, x, cfg)?;
    Ok(((p - s) / delta).max(p - spec.obstacle_at(t, x)))
}

/// Bound on `|u^Δ|∞` from `|U|∞`, `|f|∞`, `sup|H(·,·,0)|` and `T` on the grid.
pub fn uniform_bound(spec: &ProblemSpec, grid: &SpatialGrid, times: &[f64]) -> f64 {
    let nodes: Vec<_> = grid.nodes().collect();
    let u_sup = nodes
        .iter()
        .map(|x| spec.terminal_at(&x[..spec.dim]).abs())
        .fold(0.0, f64::max);
    let f_sup = times
        .iter()
        .flat_map(|&t| nodes.iter().map(move |x| (t, x)))
        .map(|(t, x)| spec.obstacle_at(t, &x[..spec.dim]))
        .filter(|v| v.is_finite())
        .map(f64::abs)
        .fold(0.0, f64::max);
    u_sup.max(f_sup) + spec.horizon * spec.sup_h_at_zero(nodes.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{HamiltonianKind, Obstacle};

    fn spec(obstacle: Obstacle, terminal: f64) -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, move |_| terminal, 1.0)
            .with_sigma(0.5)
            .with_obstacle(obstacle)
    }

    fn grid() -> SpatialGrid {
        SpatialGrid::new(&[-2.0], &[2.0], 41).unwrap()
    }

    #[test]
    fn time_grid_rules() {
        assert_eq!(time_grid(1.0, 0.25).unwrap(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(time_grid(1.0, 1.0).unwrap(), vec![1.0, 0.0]);
        // leftover 0.2 ≥ Δ/10 gets its own step
        let t = time_grid(1.0, 0.4).unwrap();
        assert_eq!(t.len(), 4);
        assert!((t[2] - 0.2).abs() < 1e-12 && t[3] == 0.0);
        // leftover 0.01 < Δ/10 merges
        let t = time_grid(1.0, 0.33).unwrap();
        assert_eq!(t.len(), 4);
        assert!((t[2] - 0.34).abs() < 1e-12 && t[3] == 0.0);
        assert!(time_grid(1.0, 0.0).is_err());
    }

    #[test]
    fn no_obstacle_step_equals_operator() {
        let s = spec(Obstacle::Constant(1e9), 0.0);
        let g = grid();
        let cfg = OperatorConfig::new(1, 2.0).unwrap();
        let phi = GridFunction::sample(&g, |x| (x[0]).sin(), 1.0).unwrap();
        let a = apply_slice(&s, 0.5, 0.1, &phi, &cfg).unwrap();
        let b = step(&s, 0.5, 0.1, &phi, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn binding_obstacle() {
        let s = spec(Obstacle::Constant(1.0), 0.0);
        let g = grid();
        let cfg = OperatorConfig::new(1, 2.0).unwrap();
        let next = GridFunction::constant(&g, 2.0);
        let out = step(&s, 0.5, 0.1, &next, &cfg).unwrap();
        assert!(out.values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let s = spec(Obstacle::Constant(0.7), 0.7);
        let g = grid();
        let cfg = OperatorConfig::new(1, 2.0).unwrap();
        let sol = solve(&s, 0.1, &g, &cfg).unwrap();
        assert_eq!(sol.times().len(), 11);
        for slice in &sol.slices.slices {
            assert!(slice.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn single_step_matches_last_interval_formula() {
        let s = ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, |x| -x[0].abs(), 0.2)
            .with_sigma(0.5)
            .with_obstacle(Obstacle::Constant(0.1));
        let g = grid();
        let cfg = OperatorConfig::new(1, 4.0).unwrap();
        let sol = solve(&s, 0.2, &g, &cfg).unwrap();
        assert_eq!(sol.times(), &[0.2, 0.0]);
        let u = GridFunction::sample(&g, |x| -x[0].abs(), 1.0).unwrap();
        let direct = step(&s, 0.0, 0.2, &u, &cfg).unwrap();
        assert_eq!(sol.slices.slices[1].values, direct.values);
        // interpolation weights
        let x = [0.3];
        let at_t = eval_solution(&sol, 0.2, &x).unwrap();
        assert!((at_t + 0.3).abs() < 1e-15);
        let at_0 = eval_solution(&sol, 0.0, &x).unwrap();
        assert!((at_0 - direct.eval(&x)).abs() < 1e-15);
        let mid = eval_solution(&sol, 0.1, &x).unwrap();
        assert!((mid - 0.5 * (at_t + at_0)).abs() < 1e-15);
        assert!(eval_solution(&sol, 0.3, &x).is_err());
        assert!(eval_solution(&sol, -0.1, &x).is_err());
    }

    #[test]
    fn residual_zero_at_fixed_points() {
        let s = spec(Obstacle::Constant(5.0), 0.0);
        let g = grid();
        let cfg = OperatorConfig::new(1, 2.0).unwrap();
        let v = GridFunction::sample(&g, |x| 0.2 * x[0].cos(), 1.0).unwrap();
        let (sv, _) = apply(&s, 0.0, 0.1, &v, &[0.1], &cfg).unwrap();
        // slack obstacle
        let r = residual_sbar(&s, 0.1, 0.0, &[0.1], sv, &v, &cfg).unwrap();
        assert!(r.abs() < 1e-12);
        // binding obstacle below the operator value
        let s2 = spec(Obstacle::Constant(sv - 0.5), 0.0);
        let r = residual_sbar(&s2, 0.1, 0.0, &[0.1], sv - 0.5, &v, &cfg).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn csv_rows_descend_in_time() {
        let s = spec(Obstacle::None, 0.0);
        let g = SpatialGrid::new(&[-1.0], &[1.0], 3).unwrap();
        let cfg = OperatorConfig::new(1, 2.0).unwrap();
        let sol = solve(&s, 0.5, &g, &cfg).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x0,value");
        assert_eq!(lines.len(), 1 + 3 * 3);
        assert!(lines[1].starts_with("1.00000000000000e0,"));
        assert!(lines[9].starts_with("0.00000000000000e0,"));
    }
}
