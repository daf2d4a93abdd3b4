//! The backward operator
//!
//! ```text
//! S_t(Δ)φ(x) = min_y { Δ·L(t, x, (x − y)/Δ) + E[φ(y + b(t,y)Δ + σ(t,y)√Δ ξ)] }
//! ```
//!
//! The expectation uses a Gauss–Hermite rule with coefficients frozen at
//! `(t, y)`; the minimization runs over the ball `|x − y| ≤ q_max·Δ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Interpolation};
use crate::hamiltonian::{legendre, ProblemSpec, Vector, MAX_DIM};
use crate::quadrature::QuadratureRule;

const INVPHI: f64 = 0.618_033_988_749_894_9;

/// Settings of the operator's minimizer search.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    pub quad: QuadratureRule,
    /// Radius of the admissible control set; the `y` window is `q_max·Δ`.
    pub q_max: f64,
    /// Coarse scan points per axis.
    pub coarse_candidates: usize,
    /// Golden-section iterations per line search.
    pub refine_iters: usize,
    /// Interpolation used inside the expectation. Anything other than
    /// [`Interpolation::Multilinear`] breaks monotonicity.
    pub interp: Interpolation,
}

impl OperatorConfig {
    pub fn new(dim: usize, q_max: f64) -> Result<Self> {
        let cfg = OperatorConfig {
            quad: QuadratureRule::gauss_hermite(7, dim)?,
            q_max,
            coarse_candidates: 17,
            refine_iters: 60,
            interp: Interpolation::Multilinear,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.q_max > 0.0) || !self.q_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "q_max must be positive, got {}",
                self.q_max
            )));
        }
        if self.coarse_candidates < 9 {
            return Err(Error::InvalidConfig(format!(
                "coarse_candidates must be >= 9, got {}",
                self.coarse_candidates
            )));
        }
        if self.refine_iters < 30 {
            return Err(Error::InvalidConfig(format!(
                "refine_iters must be >= 30, got {}",
                self.refine_iters
            )));
        }
        Ok(())
    }
}

/// Gauss–Hermite approximation of `E[φ(Y_{t+Δ}^{t,y})]` with frozen coefficients.
pub fn frozen_expectation(
    spec: &ProblemSpec,
    t: f64,
    y: &[f64],
    delta: f64,
    phi: &GridFunction,
    quad: &QuadratureRule,
) -> f64 {
    frozen_expectation_with(spec, t, y, delta, phi, quad, Interpolation::Multilinear)
}

pub(crate) fn frozen_expectation_with(
    spec: &ProblemSpec,
    t: f64,
    y: &[f64],
    delta: f64,
    phi: &GridFunction,
    quad: &QuadratureRule,
    interp: Interpolation,
) -> f64 {
    let n = spec.dim;
    let d = spec.noise_dim;
    let b = spec.drift.eval(t, y);
    let s = spec.sigma.eval(t, y);
    let sqrt_dt = delta.sqrt();
    let mut mean = [0.0; MAX_DIM];
    for i in 0..n {
        mean[i] = y[i] + b[i] * delta;
    }
    let mut acc = 0.0;
    let mut pt = [0.0; MAX_DIM];
    for (node, w) in quad.nodes.iter().zip(&quad.weights) {
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..d {
                z += s[i][j] * node[j];
            }
            pt[i] = mean[i] + sqrt_dt * z;
        }
        acc += w * phi.eval_with(&pt[..n], interp);
    }
    acc
}

struct Objective<'a> {
    spec: &'a ProblemSpec,
    t: f64,
    delta: f64,
    phi: &'a GridFunction,
    x: Vector,
    cfg: &'a OperatorConfig,
}

impl Objective<'_> {
    fn eval(&self, y: &[f64]) -> Result<f64> {
        let n = self.spec.dim;
        let mut q = [0.0; MAX_DIM];
        for i in 0..n {
            q[i] = (self.x[i] - y[i]) / self.delta;
        }
        let dual = legendre(self.spec, self.t, &self.x[..n], &q[..n])?;
        let e = frozen_expectation_with(
            self.spec,
            self.t,
            y,
            self.delta,
            self.phi,
            &self.cfg.quad,
            self.cfg.interp,
        );
        Ok(self.delta * dual.value + e)
    }
}

/// Golden-section minimization on `[lo, hi]`; returns the best evaluated point.
fn golden_min(
    mut lo: f64,
    mut hi: f64,
    iters: usize,
    mut g: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64, f64)> {
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut ga = g(a)?;
    let mut gb = g(b)?;
    for _ in 0..iters {
        if ga <= gb {
            hi = b;
            b = a;
            gb = ga;
            a = hi - INVPHI * (hi - lo);
            ga = g(a)?;
        } else {
            lo = a;
            a = b;
            ga = gb;
            b = lo + INVPHI * (hi - lo);
            gb = g(b)?;
        }
    }
    let width = hi - lo;
    Ok(if ga <= gb { (a, ga, width) } else { (b, gb, width) })
}

/// Evaluates `S_t(Δ)φ(x)` and returns `(value, minimizer y)`.
pub fn apply(
    spec: &ProblemSpec,
    t: f64,
    delta: f64,
    phi: &GridFunction,
    x: &[f64],
    cfg: &OperatorConfig,
) -> Result<(f64, Vector)> {
    check_step(spec, t, delta)?;
    let n = spec.dim;
    let obj = Objective {
        spec,
        t,
        delta,
        phi,
        x: crate::hamiltonian::to_vector(x),
        cfg,
    };
    let radius = cfg.q_max * delta;
    let k = cfg.coarse_candidates;
    let spacing = 2.0 * radius / (k - 1) as f64;
    let window_error = || Error::WindowTooSmall {
        t,
        x: x.to_vec(),
        node: None,
    };

    if n == 1 {
        let lo = x[0] - radius;
        let mut best_y = lo;
        let mut best = f64::INFINITY;
        for i in 0..k {
            let y = if i + 1 == k { x[0] + radius } else { lo + i as f64 * spacing };
            let v = obj.eval(&[y])?;
            if v < best {
                best = v;
                best_y = y;
            }
        }
        let a = (best_y - spacing).max(lo);
        let b = (best_y + spacing).min(x[0] + radius);
        let (y, v, width) = golden_min(a, b, cfg.refine_iters, |y| obj.eval(&[y]))?;
        let (y, v) = if v < best { (y, v) } else { (best_y, best) };
        if (y - x[0]).abs() >= radius - width - 1e-12 * (1.0 + radius) {
            return Err(window_error());
        }
        return Ok((v, [y, 0.0]));
    }

    // 2D: coarse scan of the disc, then cyclic golden-section line searches.
    let mut best_y = [x[0], x[1]];
    let mut best = f64::INFINITY;
    for i in 0..k {
        for j in 0..k {
            let dy = [-radius + i as f64 * spacing, -radius + j as f64 * spacing];
            if dy[0] * dy[0] + dy[1] * dy[1] > radius * radius * (1.0 + 1e-12) {
                continue;
            }
            let y = [x[0] + dy[0], x[1] + dy[1]];
            let v = obj.eval(&y)?;
            if v < best {
                best = v;
                best_y = y;
            }
        }
    }
    let mut width = spacing;
    for _sweep in 0..12 {
        let start = best_y;
        for axis in 0..2 {
            let other = 1 - axis;
            let off = best_y[other] - x[other];
            let half_chord = (radius * radius - off * off).max(0.0).sqrt();
            let a = (best_y[axis] - spacing).max(x[axis] - half_chord);
            let b = (best_y[axis] + spacing).min(x[axis] + half_chord);
            if b <= a {
                continue;
            }
            let mut y = best_y;
            let (s, v, w) = golden_min(a, b, cfg.refine_iters, |s| {
                y[axis] = s;
                obj.eval(&y)
            })?;
            width = w;
            if v < best {
                best = v;
                best_y[axis] = s;
            }
        }
        let moved = ((best_y[0] - start[0]).powi(2) + (best_y[1] - start[1]).powi(2)).sqrt();
        if moved <= 1e-12 * (1.0 + radius) {
            break;
        }
    }
    let dist = ((best_y[0] - x[0]).powi(2) + (best_y[1] - x[1]).powi(2)).sqrt();
    if dist >= radius - 2.0 * width - 1e-12 * (1.0 + radius) {
        return Err(window_error());
    }
    Ok((best, best_y))
}

fn check_step(spec: &ProblemSpec, t: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0) || t + delta > spec.horizon * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "need Δ > 0 and t + Δ ≤ T (t = {t}, Δ = {delta}, T = {})",
            spec.horizon
        )));
    }
    Ok(())
}

/// Applies the operator at every node of `phi`'s grid.
pub fn apply_slice(
    spec: &ProblemSpec,
    t: f64,
    delta: f64,
    phi: &GridFunction,
    cfg: &OperatorConfig,
) -> Result<GridFunction> {
    check_step(spec, t, delta)?;
    let grid = &phi.grid;
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|node| {
            let x = grid.node(node);
            apply(spec, t, delta, phi, &x[..grid.dim()], cfg)
                .map(|(v, _)| v)
                .map_err(|e| match e {
                    Error::WindowTooSmall { t, x, .. } => Error::WindowTooSmall {
                        t,
                        x,
                        node: Some(node),
                    },
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    GridFunction::new(
        grid.clone(),
        values,
        phi.lip_bound + spec.lipschitz_m * delta,
    )
}
