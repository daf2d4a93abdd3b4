use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianKind, MatrixField, Obstacle, ProblemSpec, VectorField};

/// Obstacle constants at or above this are treated as "no obstacle".
const OBSTACLE_SENTINEL: f64 = 1e8;

/// Standard-normal integration window. The tail mass beyond it is below 1e-22.
const Z_MAX: f64 = 10.0;

/// Exact solution of `−u_t − ½σ²u_xx + (c/2)u_x² = 0`, `u(T) = U`, via the
/// exponential transform with `a = σ²/c`:
/// `u(t,x) = −a·log E[exp(−U(x + σW_{T−t})/a)]`.
///
/// The expectation is a composite 5-point Gauss–Legendre sum over `[−10, 10]`
/// rather than Gauss–Hermite, which converges slowly when `U` has kinks.
pub fn cole_hopf_reference(spec: &ProblemSpec, t: f64, x: &[f64]) -> Result<f64> {
    cole_hopf_reference_with_panels(spec, t, x, 4000)
}

pub fn cole_hopf_reference_with_panels(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    panels: usize,
) -> Result<f64> {
    let (sigma, c) = check(spec)?;
    if panels < 100 {
        return Err(Error::InvalidConfig(format!(
            "Cole–Hopf needs at least 100 panels, got {panels}"
        )));
    }
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::OutOfRange {
            t,
            horizon: spec.horizon,
        });
    }
    let tau = spec.horizon - t;
    if tau == 0.0 {
        return Ok(spec.terminal_at(x));
    }
    let a = sigma * sigma / c;
    let spread = sigma * tau.sqrt();
    let width = 2.0 * Z_MAX / panels as f64;
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut zs = Vec::with_capacity(panels * GL5.len());
    let mut weights = Vec::with_capacity(panels * GL5.len());
    for k in 0..panels {
        let mid = -Z_MAX + (k as f64 + 0.5) * width;
        for &(node, w) in GL5.iter() {
            let z = mid + 0.5 * width * node;
            zs.push(z);
            weights.push(0.5 * width * w * inv_sqrt_2pi * (-0.5 * z * z).exp());
        }
    }
    let vals: Vec<f64> = zs.iter().map(|z| spec.terminal_at(&[x[0] + spread * z])).collect();
    // log-sum-exp around the smallest exponent
    let m = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let s: f64 = vals
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * (-(v - m) / a).exp())
        .sum();
    Ok(m - a * s.ln())
}

const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn check(spec: &ProblemSpec) -> Result<(f64, f64)> {
    let unsupported = |why: &str| Err(Error::UnsupportedProblem(why.to_string()));
    if spec.dim != 1 || spec.noise_dim != 1 {
        return unsupported("Cole–Hopf oracle is one-dimensional");
    }
    let c = match spec.hamiltonian {
        HamiltonianKind::QuadraticIso { c } => c,
        _ => return unsupported("Cole–Hopf oracle needs a quadratic Hamiltonian"),
    };
    let sigma = match &spec.sigma {
        MatrixField::Constant(m) if m[0][0] != 0.0 => m[0][0].abs(),
        _ => return unsupported("Cole–Hopf oracle needs constant nonzero σ"),
    };
    match &spec.drift {
        VectorField::Constant(b) if b[0] == 0.0 => {}
        _ => return unsupported("Cole–Hopf oracle needs zero drift"),
    }
    match spec.obstacle {
        Obstacle::None => {}
        Obstacle::Constant(v) if v >= OBSTACLE_SENTINEL => {}
        _ => return unsupported("Cole–Hopf oracle has no obstacle"),
    }
    Ok((sigma, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spec(u: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, sigma: f64, c: f64) -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c }, u, 1.0).with_sigma(sigma)
    }

    #[test]
    fn closed_form_for_capped_cone() {
        // E[exp(−min(|Z|,1))] = 2∫₀¹ e^{−z}φ(z)dz + 2e^{−1}P(Z>1), evaluated offline
        let s = spec(|x: &[f64]| x[0].abs().min(1.0), 1.0, 1.0);
        let v = cole_hopf_reference(&s, 0.0, &[0.0]).unwrap();
        assert!((v - 0.571_157_285_036_132_3).abs() < 1e-9, "{v}");
        assert!(cole_hopf_reference_with_panels(&s, 0.0, &[0.0], 10).is_err());
    }

    #[test]
    fn constants_and_terminal() {
        let s = spec(|_| 0.7, 1.0, 1.0);
        assert!((cole_hopf_reference(&s, 0.2, &[0.4]).unwrap() - 0.7).abs() < 1e-13);
        let s = spec(|x| x[0].sin(), 0.8, 1.0);
        assert_eq!(cole_hopf_reference(&s, 1.0, &[0.4]).unwrap(), 0.4f64.sin());
    }

    #[test]
    fn matches_monte_carlo_for_capped_cone() {
        let u = |x: &[f64]| x[0].abs().min(1.0);
        let s = spec(u, 1.0, 1.0);
        let v = cole_hopf_reference(&s, 0.0, &[0.0]).unwrap();
        // oracle: MC of E[exp(−U(W_1))], then the log transform (delta method for the error)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let e = (-u(&[z])).exp();
            sum += e;
            sum2 += e * e;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt() / mean;
        let mc = -mean.ln();
        assert!((v - mc).abs() < 3.0 * se, "{v} vs {mc} ± {se}");
    }

    #[test]
    fn satisfies_the_pde() {
        // finite-difference check of −u_t − ½σ²u_xx + (c/2)u_x² = 0 with c ≠ 1
        let (sigma, c) = (0.6, 2.0);
        let s = spec(|x| 0.5 * x[0].sin(), sigma, c);
        let (t, x) = (0.4, 0.3);
        let u = |t: f64, x: f64| cole_hopf_reference(&s, t, &[x]).unwrap();
        let h = 1e-3;
        let ut = (u(t + h, x) - u(t - h, x)) / (2.0 * h);
        let ux = (u(t, x + h) - u(t, x - h)) / (2.0 * h);
        let uxx = (u(t, x + h) - 2.0 * u(t, x) + u(t, x - h)) / (h * h);
        let res = -ut - 0.5 * sigma * sigma * uxx + 0.5 * c * ux * ux;
        assert!(res.abs() < 1e-5, "{res}");
    }

    #[test]
    fn rejects_obstacle() {
        let s = spec(|_| 0.0, 1.0, 1.0).with_obstacle(Obstacle::Constant(1.0));
        assert!(matches!(cole_hopf_reference(&s, 0.0, &[0.0]), Err(Error::UnsupportedProblem(_))));
        let s = spec(|_| 0.0, 1.0, 1.0).with_obstacle(Obstacle::Constant(1e9));
        assert!(cole_hopf_reference(&s, 0.0, &[0.0]).is_ok());
        let s = spec(|_| 0.0, 1.0, 1.0).with_drift(&[0.1]);
        assert!(cole_hopf_reference(&s, 0.0, &[0.0]).is_err());
    }
}
