//! Truncated uniform grids and piecewise multilinear grid functions.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hamiltonian::{Vector, MAX_DIM};

/// Uniform tensor grid on the box `[lo, hi]` in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dim: usize,
    lo: Vector,
    hi: Vector,
    points: usize,
    spacing: Vector,
}

impl SpatialGrid {
    pub fn new(lo: &[f64], hi: &[f64], points_per_axis: usize) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim > MAX_DIM || hi.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "grid bounds must have matching length 1 or 2, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if points_per_axis < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 points per axis, got {points_per_axis}"
            )));
        }
        let mut l = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        let mut spacing = [0.0; MAX_DIM];
        for i in 0..dim {
            if !(lo[i] < hi[i]) {
                return Err(Error::InvalidConfig(format!(
                    "grid axis {i}: lo = {} must be below hi = {}",
                    lo[i], hi[i]
                )));
            }
            l[i] = lo[i];
            h[i] = hi[i];
            spacing[i] = (hi[i] - lo[i]) / (points_per_axis - 1) as f64;
        }
        Ok(SpatialGrid {
            dim,
            lo: l,
            hi: h,
            points: points_per_axis,
            spacing,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis index of a flat node index; axis 0 varies slowest.
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        if self.dim == 1 {
            [node, 0]
        } else {
            [node / self.points, node % self.points]
        }
    }

    pub fn flat_index(&self, idx: [usize; MAX_DIM]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.points + idx[1]
        }
    }

    pub fn node(&self, node: usize) -> Vector {
        let idx = self.multi_index(node);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.coord(a, idx[a]);
        }
        x
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing[axis]
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vector> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// True if `x` lies in the box shrunk by `margin` on every side.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] + margin && x[a] <= self.hi[a] - margin)
    }

    /// Refined grid over the same box with `factor` times as many intervals.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        SpatialGrid::new(self.lo(), self.hi(), (self.points - 1) * factor + 1)
    }

    /// Cell index and local coordinate in `[0, 1]` along `axis`, clamped to the box.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let h = self.spacing[axis];
        let s = ((x - self.lo[axis]) / h).clamp(0.0, (self.points - 1) as f64);
        let mut i = s.floor() as usize;
        if i >= self.points - 1 {
            i = self.points - 2;
        }
        (i, s - i as f64)
    }
}

/// Sub-box and time window over which errors are measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportingRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl ReportingRegion {
    /// The whole grid box and `[0, horizon]`.
    pub fn whole(grid: &SpatialGrid, horizon: f64) -> Self {
        ReportingRegion {
            lo: grid.lo().to_vec(),
            hi: grid.hi().to_vec(),
            t_min: 0.0,
            t_max: horizon,
        }
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((lo, hi), v)| *v >= lo - 1e-12 && *v <= hi + 1e-12)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t_min - 1e-12 && t <= self.t_max + 1e-12
    }

    /// Grid nodes inside the box.
    pub fn nodes(&self, grid: &SpatialGrid) -> Vec<usize> {
        (0..grid.len())
            .filter(|&i| self.contains_point(&grid.node(i)[..grid.dim()]))
            .collect()
    }
}

/// Interpolation rule used by [`GridFunction::eval_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Multilinear with clamped extrapolation. Monotone.
    #[default]
    Multilinear,
    /// Catmull–Rom cubic. Not monotone; kept as a negative control for the
    /// monotonicity checks.
    CatmullRom,
}

/// Node values of a scalar function on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
    pub lip_bound: f64,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<f64>, lip_bound: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} node values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(GridFunction {
            grid,
            values,
            lip_bound,
        })
    }

    pub fn constant(grid: &SpatialGrid, c: f64) -> Self {
        GridFunction {
            grid: grid.clone(),
            values: vec![c; grid.len()],
            lip_bound: 0.0,
        }
    }

    /// Samples `f` at every node.
    pub fn sample(grid: &SpatialGrid, f: impl Fn(&[f64]) -> f64, lip: f64) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().map(|x| f(&x[..grid.dim()])).collect();
        GridFunction::new(grid.clone(), values, lip)
    }

    /// Multilinear interpolation inside the box, clamped outside.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        if g.dim == 1 {
            let (i, w) = g.locate(0, x[0]);
            let v = &self.values;
            v[i] + w * (v[i + 1] - v[i])
        } else {
            let (i, wx) = g.locate(0, x[0]);
            let (j, wy) = g.locate(1, x[1]);
            let n = g.points;
            let v = &self.values;
            let v00 = v[i * n + j];
            let v01 = v[i * n + j + 1];
            let v10 = v[(i + 1) * n + j];
            let v11 = v[(i + 1) * n + j + 1];
            (1.0 - wx) * ((1.0 - wy) * v00 + wy * v01) + wx * ((1.0 - wy) * v10 + wy * v11)
        }
    }

    pub fn eval_with(&self, x: &[f64], interp: Interpolation) -> f64 {
        match interp {
            Interpolation::Multilinear => self.eval(x),
            Interpolation::CatmullRom => self.eval_catmull_rom(x),
        }
    }

    fn eval_catmull_rom(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.points;
        let weights = |w: f64| {
            let w2 = w * w;
            let w3 = w2 * w;
            [
                0.5 * (-w3 + 2.0 * w2 - w),
                0.5 * (3.0 * w3 - 5.0 * w2 + 2.0),
                0.5 * (-3.0 * w3 + 4.0 * w2 + w),
                0.5 * (w3 - w2),
            ]
        };
        let clampi = |k: isize| k.clamp(0, n as isize - 1) as usize;
        let (i, wx) = g.locate(0, x[0]);
        let cx = weights(wx);
        if g.dim == 1 {
            (0..4)
                .map(|a| cx[a] * self.values[clampi(i as isize + a as isize - 1)])
                .sum()
        } else {
            let (j, wy) = g.locate(1, x[1]);
            let cy = weights(wy);
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    let ii = clampi(i as isize + a as isize - 1);
                    let jj = clampi(j as isize + b as isize - 1);
                    s += cx[a] * cy[b] * self.values[ii * n + jj];
                }
            }
            s
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            lip_bound: self.lip_bound,
        }
    }

    /// Largest adjacent-node difference divided by the spacing.
    pub fn observed_lipschitz(&self) -> f64 {
        (0..self.grid.dim)
            .map(|a| self.observed_lipschitz_axis(a))
            .fold(0.0, f64::max)
    }

    /// True if adjacent node differences respect `lip_bound` (up to 1e−9).
    pub fn honors_lip_bound(&self) -> bool {
        let g = &self.grid;
        (0..g.dim).all(|a| self.observed_lipschitz_axis(a) * g.spacing[a] <= self.lip_bound * g.spacing[a] + 1e-9)
    }

    fn observed_lipschitz_axis(&self, axis: usize) -> f64 {
        let g = &self.grid;
        let mut lip = 0.0_f64;
        for node in 0..g.len() {
            let idx = g.multi_index(node);
            if idx[axis] + 1 < g.points {
                let mut next = idx;
                next[axis] += 1;
                let d = (self.values[g.flat_index(next)] - self.values[node]).abs();
                lip = lip.max(d / g.spacing[axis]);
            }
        }
        lip
    }

    /// One row per node: coordinates then value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let axes = ["x0", "x1"];
        writeln!(out, "{},value", axes[..self.grid.dim].join(","))?;
        for (node, v) in self.values.iter().enumerate() {
            let x = self.grid.node(node);
            for xi in &x[..self.grid.dim] {
                write!(out, "{},", fmt_sci(*xi))?;
            }
            writeln!(out, "{}", fmt_sci(*v))?;
        }
        Ok(())
    }
}

/// Scientific notation with 15 significant digits.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.14e}")
}
