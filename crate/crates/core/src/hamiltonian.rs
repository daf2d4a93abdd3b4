//! Problem coefficients, the Hamiltonian registry and its Legendre–Fenchel dual.
//!
//! The equation being approximated is
//!
//! ```text
//! max{ -u_t - ½ tr(σσᵀ D²u) - b·Du + H(t,x,Du),  u - f } = 0,   u(T,·) = U
//! ```
//!
//! and the dual running cost is `L(t,x,q) = sup_p { p·q - H(t,x,p) }`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest supported state (and noise) dimension.
pub const MAX_DIM: usize = 2;

/// A point or vector in at most [`MAX_DIM`] dimensions. Entries past the active
/// dimension are kept at zero.
pub type Vector = [f64; MAX_DIM];

/// Row-major `n × d` matrix, padded to `MAX_DIM × MAX_DIM`.
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> Vector + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> Matrix + Send + Sync>;
pub type HamiltonianFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Relative tolerance of the numerical dual maximization.
pub const DUAL_TOL: f64 = 1e-10;
const DUAL_MAX_ITERS: usize = 400;

pub(crate) fn to_vector(x: &[f64]) -> Vector {
    let mut v = [0.0; MAX_DIM];
    v[..x.len()].copy_from_slice(x);
    v
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Drift coefficient `b(t,x)`.
#[derive(Clone)]
pub enum VectorField {
    Constant(Vector),
    Custom(VectorFn),
}

impl VectorField {
    pub fn eval(&self, t: f64, x: &[f64]) -> Vector {
        match self {
            VectorField::Constant(v) => *v,
            VectorField::Custom(f) => f(t, x),
        }
    }
}

/// Diffusion coefficient `σ(t,x)`.
#[derive(Clone)]
pub enum MatrixField {
    Constant(Matrix),
    Custom(MatrixFn),
}

impl MatrixField {
    pub fn eval(&self, t: f64, x: &[f64]) -> Matrix {
        match self {
            MatrixField::Constant(m) => *m,
            MatrixField::Custom(f) => f(t, x),
        }
    }
}

/// Obstacle `f(t,x)`. `None` stands for `f ≡ +∞`.
#[derive(Clone)]
pub enum Obstacle {
    None,
    Constant(f64),
    Field(ScalarFn),
}

impl Obstacle {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Obstacle::None => f64::INFINITY,
            Obstacle::Constant(c) => *c,
            Obstacle::Field(f) => f(t, x),
        }
    }
}

/// Declared lower growth bound `H(t,x,p) ≥ constant·|p|^exponent − offset`,
/// with `exponent > 1`. Used to size the search box of the dual ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthCertificate {
    pub exponent: f64,
    pub constant: f64,
    pub offset: f64,
}

/// The registry of supported Hamiltonians.
#[derive(Clone)]
pub enum HamiltonianKind {
    /// `H = c|p|²/2`
    QuadraticIso { c: f64 },
    /// `H = c|p|^m/m`, `m` even
    PowerIso { m: u32, c: f64 },
    /// Sampled convex evaluator with a declared superlinear growth bound.
    TabulatedConvex {
        h: HamiltonianFn,
        growth: GrowthCertificate,
    },
}

impl fmt::Debug for HamiltonianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamiltonianKind::QuadraticIso { c } => write!(f, "QuadraticIso {{ c: {c} }}"),
            HamiltonianKind::PowerIso { m, c } => write!(f, "PowerIso {{ m: {m}, c: {c} }}"),
            HamiltonianKind::TabulatedConvex { growth, .. } => {
                write!(f, "TabulatedConvex {{ growth: {growth:?} }}")
            }
        }
    }
}

impl HamiltonianKind {
    fn check(&self) -> Result<()> {
        match self {
            HamiltonianKind::QuadraticIso { c } if !(*c > 0.0) => Err(Error::InvalidProblem(
                format!("quadratic Hamiltonian needs c > 0, got {c}"),
            )),
            HamiltonianKind::PowerIso { m, c } if *m < 2 || m % 2 != 0 || !(*c > 0.0) => {
                Err(Error::InvalidProblem(format!(
                    "power Hamiltonian needs even m >= 2 and c > 0, got m = {m}, c = {c}"
                )))
            }
            HamiltonianKind::TabulatedConvex { growth, .. }
                if !(growth.exponent > 1.0) || !(growth.constant > 0.0) =>
            {
                Err(Error::InvalidProblem(format!(
                    "growth certificate must be superlinear: {growth:?}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Result of a Legendre transform evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEvaluation {
    pub value: f64,
    pub argmax: Vector,
    pub iterations: usize,
    pub converged: bool,
}

/// Coefficients and data of one obstacle problem.
#[derive(Clone)]
pub struct ProblemSpec {
    /// State dimension `n`.
    pub dim: usize,
    /// Brownian dimension `d`.
    pub noise_dim: usize,
    pub sigma: MatrixField,
    pub drift: VectorField,
    pub hamiltonian: HamiltonianKind,
    pub obstacle: Obstacle,
    pub terminal: TerminalFn,
    pub horizon: f64,
    /// Shared Lipschitz bound of the coefficients and data.
    pub lipschitz_m: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("hamiltonian", &self.hamiltonian)
            .field("horizon", &self.horizon)
            .field("lipschitz_m", &self.lipschitz_m)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// A problem with unit diffusion, zero drift and no obstacle.
    pub fn new(
        dim: usize,
        hamiltonian: HamiltonianKind,
        terminal: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        horizon: f64,
    ) -> Self {
        let mut sigma = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in sigma.iter_mut().enumerate().take(dim) {
            row[i] = 1.0;
        }
        ProblemSpec {
            dim,
            noise_dim: dim,
            sigma: MatrixField::Constant(sigma),
            drift: VectorField::Constant([0.0; MAX_DIM]),
            hamiltonian,
            obstacle: Obstacle::None,
            terminal: Arc::new(terminal),
            horizon,
            lipschitz_m: 1.0,
        }
    }

    /// Isotropic constant diffusion `σ = s·I`.
    pub fn with_sigma(mut self, s: f64) -> Self {
        let mut sigma = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in sigma.iter_mut().enumerate().take(self.dim) {
            row[i] = s;
        }
        self.sigma = MatrixField::Constant(sigma);
        self.noise_dim = self.dim;
        self
    }

    pub fn with_drift(mut self, b: &[f64]) -> Self {
        self.drift = VectorField::Constant(to_vector(b));
        self
    }

    pub fn with_obstacle(mut self, obstacle: Obstacle) -> Self {
        self.obstacle = obstacle;
        self
    }

    pub fn with_lipschitz(mut self, m: f64) -> Self {
        self.lipschitz_m = m;
        self
    }

    pub fn obstacle_at(&self, t: f64, x: &[f64]) -> f64 {
        self.obstacle.eval(t, x)
    }

    pub fn terminal_at(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// Checks the structural invariants, sampling `f(T,·) ≥ U` and the growth
    /// probe at the given points.
    pub fn validate<'a>(&self, samples: impl IntoIterator<Item = &'a Vector>) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.dim == 0 || self.dim > MAX_DIM || self.noise_dim == 0 || self.noise_dim > MAX_DIM
        {
            return Err(Error::InvalidProblem(format!(
                "unsupported dimensions n = {}, d = {}",
                self.dim, self.noise_dim
            )));
        }
        self.hamiltonian.check()?;
        let samples: Vec<&Vector> = samples.into_iter().collect();
        for x in &samples {
            let x = &x[..self.dim];
            let f = self.obstacle_at(self.horizon, x);
            let u = self.terminal_at(x);
            if u > f + 1e-12 {
                return Err(Error::InvalidProblem(format!(
                    "terminal datum exceeds obstacle at x = {x:?}: U = {u}, f(T) = {f}"
                )));
            }
        }
        if let HamiltonianKind::TabulatedConvex { .. } = self.hamiltonian {
            for x in samples.iter().take(16) {
                for &t in &[0.0, 0.5 * self.horizon, self.horizon] {
                    self.probe_coercivity(t, &x[..self.dim])?;
                }
            }
        }
        Ok(())
    }

    /// `H(t,x,p)/|p|` must increase along rays out to `|p| = 10³`.
    pub fn probe_coercivity(&self, t: f64, x: &[f64]) -> Result<()> {
        for dir in probe_directions(self.dim) {
            let mut last = f64::NEG_INFINITY;
            for k in 0..=12 {
                let r = 10f64.powf(k as f64 / 4.0);
                let p: Vec<f64> = dir.iter().take(self.dim).map(|d| d * r).collect();
                let ratio = eval_h(self, t, x, &p) / r;
                if !(ratio > last) {
                    return Err(Error::InvalidProblem(format!(
                        "Hamiltonian failed the coercivity probe at t = {t}, x = {x:?}, |p| = {r}"
                    )));
                }
                last = ratio;
            }
        }
        Ok(())
    }

    /// `sup |H(t,x,0)|` over the given sample points and `t ∈ {0, T/2, T}`.
    pub fn sup_h_at_zero<'a>(&self, samples: impl IntoIterator<Item = &'a Vector>) -> f64 {
        match self.hamiltonian {
            HamiltonianKind::QuadraticIso { .. } | HamiltonianKind::PowerIso { .. } => 0.0,
            HamiltonianKind::TabulatedConvex { .. } => {
                let zero = [0.0; MAX_DIM];
                let mut sup = 0.0_f64;
                for x in samples {
                    for &t in &[0.0, 0.5 * self.horizon, self.horizon] {
                        sup = sup.max(eval_h(self, t, &x[..self.dim], &zero[..self.dim]).abs());
                    }
                }
                sup
            }
        }
    }

    /// True when `H`, `σ` and `b` do not depend on `(t, x)`, so the dual can
    /// be tabulated once.
    pub fn is_homogeneous(&self) -> bool {
        !matches!(self.hamiltonian, HamiltonianKind::TabulatedConvex { .. })
    }
}

fn probe_directions(dim: usize) -> Vec<Vector> {
    if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                [a.cos(), a.sin()]
            })
            .collect()
    }
}

/// Evaluates `H(t,x,p)`.
pub fn eval_h(spec: &ProblemSpec, t: f64, x: &[f64], p: &[f64]) -> f64 {
    match &spec.hamiltonian {
        HamiltonianKind::QuadraticIso { c } => 0.5 * c * dot(p, p),
        HamiltonianKind::PowerIso { m, c } => {
            let sq = dot(p, p);
            c * sq.powi((*m / 2) as i32) / *m as f64
        }
        HamiltonianKind::TabulatedConvex { h, .. } => h(t, x, p),
    }
}

/// Gradient of `H` in `p`. Central differences for the tabulated kind.
pub fn grad_h(spec: &ProblemSpec, t: f64, x: &[f64], p: &[f64]) -> Vector {
    let mut g = [0.0; MAX_DIM];
    match &spec.hamiltonian {
        HamiltonianKind::QuadraticIso { c } => {
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi = c * pi;
            }
        }
        HamiltonianKind::PowerIso { m, c } => {
            let scale = c * dot(p, p).powi((*m / 2) as i32 - 1);
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi = scale * pi;
            }
        }
        HamiltonianKind::TabulatedConvex { h, .. } => {
            let mut pp = to_vector(p);
            for i in 0..p.len() {
                let step = 1e-6 * (1.0 + p[i].abs());
                pp[i] = p[i] + step;
                let up = h(t, x, &pp[..p.len()]);
                pp[i] = p[i] - step;
                let down = h(t, x, &pp[..p.len()]);
                pp[i] = p[i];
                g[i] = (up - down) / (2.0 * step);
            }
        }
    }
    g
}

/// Evaluates `L(t,x,q) = sup_p { p·q − H(t,x,p) }` and its maximizer.
pub fn legendre(spec: &ProblemSpec, t: f64, x: &[f64], q: &[f64]) -> Result<DualEvaluation> {
    match &spec.hamiltonian {
        HamiltonianKind::QuadraticIso { c } => {
            let mut argmax = [0.0; MAX_DIM];
            for (a, qi) in argmax.iter_mut().zip(q) {
                *a = qi / c;
            }
            Ok(DualEvaluation {
                value: dot(q, q) / (2.0 * c),
                argmax,
                iterations: 0,
                converged: true,
            })
        }
        HamiltonianKind::PowerIso { m, c } => power_dual(*m, *c, q),
        HamiltonianKind::TabulatedConvex { h, growth } => tabulated_dual(h, growth, t, x, q),
    }
}

/// Isotropic kinds: the maximizer is parallel to `q`, so the problem reduces to
/// `sup_{r ≥ 0} r|q| − c r^m / m`, solved by bracketed Newton on the
/// first-order condition `|q| = c r^{m−1}`.
fn power_dual(m: u32, c: f64, q: &[f64]) -> Result<DualEvaluation> {
    let qn = norm(q);
    if qn == 0.0 {
        return Ok(DualEvaluation {
            value: 0.0,
            argmax: [0.0; MAX_DIM],
            iterations: 0,
            converged: true,
        });
    }
    let foc = |r: f64| qn - c * r.powi(m as i32 - 1);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut iterations = 0;
    while foc(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > DUAL_MAX_ITERS || !hi.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                q: q.to_vec(),
            });
        }
    }
    let mut r = 0.5 * (lo + hi);
    let mut converged = false;
    while iterations < DUAL_MAX_ITERS {
        iterations += 1;
        let g = foc(r);
        if g > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let dg = -c * (m as f64 - 1.0) * r.powi(m as i32 - 2);
        let mut next = if dg != 0.0 { r - g / dg } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - r).abs() <= 1e-15 * (1.0 + r) || hi - lo <= 1e-15 * (1.0 + r);
        r = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            q: q.to_vec(),
        });
    }
    let mut argmax = [0.0; MAX_DIM];
    for (a, qi) in argmax.iter_mut().zip(q) {
        *a = r * qi / qn;
    }
    let value = r * qn - c * r.powi(m as i32) / m as f64;
    Ok(DualEvaluation {
        value,
        argmax,
        iterations,
        converged,
    })
}

const INVPHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
/// Returns `(argmax, value, iterations)`.
fn golden_max(mut lo: f64, mut hi: f64, tol: f64, mut g: impl FnMut(f64) -> f64) -> (f64, f64, usize) {
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut ga = g(a);
    let mut gb = g(b);
    let mut iters = 0;
    while hi - lo > tol && iters < DUAL_MAX_ITERS {
        iters += 1;
        if ga >= gb {
            hi = b;
            b = a;
            gb = ga;
            a = hi - INVPHI * (hi - lo);
            ga = g(a);
        } else {
            lo = a;
            a = b;
            ga = gb;
            b = lo + INVPHI * (hi - lo);
            gb = g(b);
        }
    }
    if ga >= gb {
        (a, ga, iters)
    } else {
        (b, gb, iters)
    }
}

/// Radius outside of which `p·q − H(p) < −H(0)` is guaranteed by the growth
/// certificate, so every maximizer lies inside.
fn certificate_radius(growth: &GrowthCertificate, qn: f64, h0: f64) -> f64 {
    let mut r: f64 = 1.0;
    for _ in 0..200 {
        if growth.constant * r.powf(growth.exponent) - growth.offset > r * qn + h0.abs() + 1.0 {
            return r;
        }
        r *= 2.0;
    }
    f64::INFINITY
}

fn tabulated_dual(
    h: &HamiltonianFn,
    growth: &GrowthCertificate,
    t: f64,
    x: &[f64],
    q: &[f64],
) -> Result<DualEvaluation> {
    let n = q.len();
    let zero = [0.0; MAX_DIM];
    let h0 = h(t, x, &zero[..n]);
    let radius = certificate_radius(growth, norm(q), h0);
    if !radius.is_finite() {
        return Err(Error::NonConvergence {
            iterations: 200,
            q: q.to_vec(),
        });
    }
    let objective = |p: &[f64]| dot(p, q) - h(t, x, p);
    let line_tol = 1e-9;

    if n == 1 {
        let (p, value, iterations) =
            golden_max(-radius, radius, line_tol, |p| objective(&[p]));
        if (p.abs() - radius).abs() < 10.0 * line_tol {
            return Err(Error::NonConvergence {
                iterations,
                q: q.to_vec(),
            });
        }
        return Ok(DualEvaluation {
            value,
            argmax: [p, 0.0],
            iterations,
            converged: true,
        });
    }

    // 2D: pattern search with exact line maximization along the axes and the
    // diagonals, restarted from a few points; the best local result wins.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let directions: [Vector; 4] = [[1.0, 0.0], [0.0, 1.0], [s, s], [s, -s]];
    let qn = norm(q);
    let mut starts: Vec<Vector> = vec![[0.0, 0.0]];
    if qn > 0.0 {
        starts.push([0.5 * radius * q[0] / qn, 0.5 * radius * q[1] / qn]);
    }
    let mut best: Option<DualEvaluation> = None;
    let mut total_iters = 0;
    for start in starts {
        let mut p = start;
        let mut value = objective(&p);
        let mut converged = false;
        for _sweep in 0..DUAL_MAX_ITERS {
            let before = value;
            let p_before = p;
            for d in &directions {
                // Segment of the line p + s·d inside the certificate ball.
                let pd = p[0] * d[0] + p[1] * d[1];
                let disc = pd * pd - (p[0] * p[0] + p[1] * p[1] - radius * radius);
                if disc <= 0.0 {
                    continue;
                }
                let (s_lo, s_hi) = (-pd - disc.sqrt(), -pd + disc.sqrt());
                let (s_best, v_best, it) = golden_max(s_lo, s_hi, line_tol, |s| {
                    objective(&[p[0] + s * d[0], p[1] + s * d[1]])
                });
                total_iters += it;
                if v_best > value {
                    p = [p[0] + s_best * d[0], p[1] + s_best * d[1]];
                    value = v_best;
                }
            }
            let moved = ((p[0] - p_before[0]).powi(2) + (p[1] - p_before[1]).powi(2)).sqrt();
            if value - before <= DUAL_TOL * 1e-3 * (1.0 + value.abs()) && moved <= 1e-7 * (1.0 + norm(&p)) {
                converged = true;
                break;
            }
        }
        if norm(&p) > radius * (1.0 - 1e-9) {
            continue;
        }
        if best.is_none_or(|b| value > b.value) {
            best = Some(DualEvaluation {
                value,
                argmax: p,
                iterations: total_iters,
                converged,
            });
        }
    }
    match best {
        Some(mut b) if b.converged => {
            b.iterations = total_iters;
            Ok(b)
        }
        _ => Err(Error::NonConvergence {
            iterations: total_iters,
            q: q.to_vec(),
        }),
    }
}

/// Radius `q_max` of the control window: twice the largest `|∇_p H|` over the
/// ball `|p| ≤ p_probe` at the sampled `(t, x)`.
pub fn effective_control_bound(
    spec: &ProblemSpec,
    p_probe: f64,
    samples: &[(f64, Vector)],
) -> Result<f64> {
    if !(p_probe > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "probe radius must be positive, got {p_probe}"
        )));
    }
    let probes = probe_ball(spec.dim, p_probe);
    let default_sample = [(0.0, [0.0; MAX_DIM])];
    let samples = if samples.is_empty() || spec.is_homogeneous() {
        &default_sample[..]
    } else {
        samples
    };
    let mut max_grad = 0.0_f64;
    for (t, x) in samples {
        for p in &probes {
            let g = grad_h(spec, *t, &x[..spec.dim], &p[..spec.dim]);
            let gn = norm(&g[..spec.dim]);
            if !gn.is_finite() {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    q: p[..spec.dim].to_vec(),
                });
            }
            max_grad = max_grad.max(gn);
        }
    }
    Ok(2.0 * max_grad.max(1e-3))
}

fn probe_ball(dim: usize, radius: f64) -> Vec<Vector> {
    if dim == 1 {
        (0..=400)
            .map(|i| [-radius + 2.0 * radius * i as f64 / 400.0, 0.0])
            .collect()
    } else {
        let mut pts = vec![[0.0, 0.0]];
        for ir in 1..=40 {
            let r = radius * ir as f64 / 40.0;
            for ia in 0..64 {
                let a = ia as f64 * std::f64::consts::TAU / 64.0;
                pts.push([r * a.cos(), r * a.sin()]);
            }
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64) -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c }, |_| 0.0, 1.0)
    }

    fn power4() -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::PowerIso { m: 4, c: 1.0 }, |_| 0.0, 1.0)
    }

    fn tabulated_sin() -> ProblemSpec {
        let h: HamiltonianFn = Arc::new(|_t, x: &[f64], p: &[f64]| {
            let r = norm(p);
            0.5 * r * r + x[0].sin() * r
        });
        ProblemSpec::new(
            1,
            HamiltonianKind::TabulatedConvex {
                h,
                growth: GrowthCertificate {
                    exponent: 2.0,
                    constant: 0.5,
                    offset: 1.0,
                },
            },
            |_| 0.0,
            1.0,
        )
    }

    #[test]
    fn eval_h_examples() {
        assert_eq!(eval_h(&quad(1.0), 0.0, &[0.0], &[2.0]), 2.0);
        assert_eq!(eval_h(&quad(1.0), 0.0, &[0.0], &[0.0]), 0.0);
        assert_eq!(eval_h(&power4(), 0.0, &[0.0], &[0.0]), 0.0);
        assert_eq!(eval_h(&power4(), 0.0, &[0.0], &[1.0]), 0.25);
    }

    #[test]
    fn quadratic_dual_is_closed_form() {
        let d = legendre(&quad(1.0), 0.0, &[0.0], &[3.0]).unwrap();
        assert_eq!(d.value, 4.5);
        assert_eq!(d.argmax[0], 3.0);
        assert_eq!(d.iterations, 0);
    }

    #[test]
    fn power_dual_matches_dense_grid_search() {
        // oracle: dense scan of p·q − p⁴/4 over [−10, 10] at spacing 1e−5
        let q = 1.0;
        let mut best = f64::NEG_INFINITY;
        let n = 2_000_000;
        for i in 0..=n {
            let p = -10.0 + 20.0 * i as f64 / n as f64;
            best = best.max(p * q - p.powi(4) / 4.0);
        }
        assert!((best - 0.75).abs() < 1e-9);
        let d = legendre(&power4(), 0.0, &[0.0], &[q]).unwrap();
        assert!((d.value - best).abs() < 1e-9);
        assert!((d.value - 0.75 * q.abs().powf(4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn power_dual_2d_radial() {
        let spec = ProblemSpec::new(2, HamiltonianKind::PowerIso { m: 4, c: 1.0 }, |_| 0.0, 1.0);
        let q = [0.6, -0.8];
        let d = legendre(&spec, 0.0, &[0.0, 0.0], &q).unwrap();
        assert!((d.value - 0.75).abs() < 1e-12);
        let fy = dot(&d.argmax, &q) - eval_h(&spec, 0.0, &[0.0, 0.0], &d.argmax);
        assert!((fy - d.value).abs() < 1e-12);
    }

    #[test]
    fn tabulated_dual_fenchel_young_pair() {
        let spec = tabulated_sin();
        for &(x, q) in &[(0.3, 1.7), (-1.0, 0.2), (2.0, -3.0), (0.0, 0.0)] {
            let d = legendre(&spec, 0.0, &[x], &[q]).unwrap();
            let fy = d.argmax[0] * q - eval_h(&spec, 0.0, &[x], &d.argmax[..1]);
            assert!((fy - d.value).abs() < 1e-10 * (1.0 + d.value.abs()));
            // compare against a dense scan
            let mut best = f64::NEG_INFINITY;
            for i in 0..=200_000 {
                let p = -10.0 + 20.0 * i as f64 / 200_000.0;
                best = best.max(p * q - eval_h(&spec, 0.0, &[x], &[p]));
            }
            assert!(d.value >= best - 1e-9, "{} < {}", d.value, best);
            assert!(d.value - best < 1e-6);
        }
    }

    #[test]
    fn tabulated_dual_2d() {
        let h: HamiltonianFn = Arc::new(|_t, _x: &[f64], p: &[f64]| {
            0.5 * (2.0 * p[0] * p[0] + p[1] * p[1] + p[0] * p[1]) + 0.3
        });
        let spec = ProblemSpec::new(
            2,
            HamiltonianKind::TabulatedConvex {
                h,
                growth: GrowthCertificate {
                    exponent: 2.0,
                    constant: 0.25,
                    offset: 0.0,
                },
            },
            |_| 0.0,
            1.0,
        );
        // closed form: L(q) = ½ qᵀA⁻¹q − 0.3 with A = [[2, .5], [.5, 1]]
        let q = [1.0, -2.0];
        let det = 2.0 - 0.25;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
        let exact = 0.5
            * (q[0] * (inv[0][0] * q[0] + inv[0][1] * q[1])
                + q[1] * (inv[1][0] * q[0] + inv[1][1] * q[1]))
            - 0.3;
        let d = legendre(&spec, 0.0, &[0.0, 0.0], &q).unwrap();
        assert!((d.value - exact).abs() < 1e-9, "{} vs {}", d.value, exact);
    }

    #[test]
    fn non_coercive_tabulated_is_rejected() {
        let h: HamiltonianFn = Arc::new(|_t, _x: &[f64], p: &[f64]| norm(p));
        let spec = ProblemSpec::new(
            1,
            HamiltonianKind::TabulatedConvex {
                h,
                growth: GrowthCertificate {
                    exponent: 2.0,
                    constant: 1.0,
                    offset: 0.0,
                },
            },
            |_| 0.0,
            1.0,
        );
        assert!(spec.probe_coercivity(0.0, &[0.0]).is_err());
        // the (false) certificate keeps the box finite; the maximizer of
        // p·q − |p| with |q| > 1 runs into its edge
        assert!(matches!(
            legendre(&spec, 0.0, &[0.0], &[2.0]),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn control_bound_examples() {
        assert!((effective_control_bound(&quad(1.0), 2.0, &[]).unwrap() - 4.0).abs() < 1e-12);
        assert!((effective_control_bound(&power4(), 1.0, &[]).unwrap() - 2.0).abs() < 1e-12);
        // tabulated: compare with a finite-difference sweep over the probe ball
        let spec = tabulated_sin();
        let samples: Vec<(f64, Vector)> = (0..9).map(|i| (0.0, [-2.0 + 0.5 * i as f64, 0.0])).collect();
        let qmax = effective_control_bound(&spec, 2.0, &samples).unwrap();
        let mut sup = 0.0_f64;
        for (_, x) in &samples {
            for i in 0..=1000 {
                let p = -2.0 + 4.0 * i as f64 / 1000.0;
                let e = 1e-5;
                let g = (eval_h(&spec, 0.0, &x[..1], &[p + e]) - eval_h(&spec, 0.0, &x[..1], &[p - e])) / (2.0 * e);
                sup = sup.max(g.abs());
            }
        }
        assert!(qmax >= sup);
    }

    #[test]
    fn validate_rejects_terminal_above_obstacle() {
        let spec = quad(1.0).with_obstacle(Obstacle::Constant(-1.0));
        let pts = [[0.0, 0.0]];
        assert!(spec.validate(pts.iter()).is_err());
        let spec = quad(1.0).with_obstacle(Obstacle::Constant(0.0));
        assert!(spec.validate(pts.iter()).is_ok());
        let mut bad = quad(1.0);
        bad.horizon = 0.0;
        assert!(bad.validate(pts.iter()).is_err());
    }
}
