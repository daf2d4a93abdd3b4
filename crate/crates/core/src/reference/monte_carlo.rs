use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::hamiltonian::{ProblemSpec, MAX_DIM};

/// Sample mean of `φ(y + bΔ + σ√Δ ξ)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
}

/// Monte Carlo counterpart of [`crate::operator::frozen_expectation`].
/// Deterministic for a fixed seed.
pub fn mc_expectation(
    spec: &ProblemSpec,
    t: f64,
    y: &[f64],
    delta: f64,
    phi: &GridFunction,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 1000 {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo needs at least 1000 samples, got {n_samples}"
        )));
    }
    let n = spec.dim;
    let d = spec.noise_dim;
    let b = spec.drift.eval(t, y);
    let s = spec.sigma.eval(t, y);
    let sqrt_dt = delta.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pt = [0.0; MAX_DIM];
    let mut xi = [0.0; MAX_DIM];
    // accumulate deviations from the first sample so constant integrands are exact
    let mut shift = None;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n_samples {
        for z in xi.iter_mut().take(d) {
            *z = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..d {
                z += s[i][j] * xi[j];
            }
            pt[i] = y[i] + b[i] * delta + sqrt_dt * z;
        }
        let v = phi.eval(&pt[..n]);
        let s0 = *shift.get_or_insert(v);
        let dv = v - s0;
        sum += dv;
        sum2 += dv * dv;
    }
    let nf = n_samples as f64;
    let mean_dev = sum / nf;
    let var = ((sum2 - nf * mean_dev * mean_dev) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        mean: shift.unwrap_or(0.0) + mean_dev,
        std_error: (var / nf).sqrt(),
        n: n_samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::hamiltonian::HamiltonianKind;

    fn spec(sigma: f64, b: f64) -> ProblemSpec {
        ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, |_| 0.0, 1.0)
            .with_sigma(sigma)
            .with_drift(&[b])
    }

    #[test]
    fn constant_is_exact() {
        let grid = SpatialGrid::new(&[-1.0], &[1.0], 11).unwrap();
        let phi = GridFunction::constant(&grid, 0.37);
        let est = mc_expectation(&spec(1.0, 0.2), 0.0, &[0.1], 0.3, &phi, 5000, 3).unwrap();
        assert_eq!(est.mean, 0.37);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn deterministic_dynamics() {
        let grid = SpatialGrid::new(&[-2.0], &[2.0], 41).unwrap();
        let phi = GridFunction::sample(&grid, |x| x[0].sin(), 1.0).unwrap();
        let est = mc_expectation(&spec(0.0, 0.5), 0.0, &[0.1], 0.2, &phi, 2000, 9).unwrap();
        assert_eq!(est.mean, phi.eval(&[0.1 + 0.5 * 0.2]));
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let grid = SpatialGrid::new(&[-3.0], &[3.0], 301).unwrap();
        let phi = GridFunction::sample(&grid, |x| x[0].cos(), 1.0).unwrap();
        let s = spec(0.5, 1.0);
        let a = mc_expectation(&s, 0.0, &[0.3], 0.04, &phi, 10_000, 42).unwrap();
        let b = mc_expectation(&s, 0.0, &[0.3], 0.04, &phi, 10_000, 42).unwrap();
        let c = mc_expectation(&s, 0.0, &[0.3], 0.04, &phi, 10_000, 43).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_ne!(a.mean.to_bits(), c.mean.to_bits());
        assert!(mc_expectation(&s, 0.0, &[0.3], 0.04, &phi, 999, 42).is_err());
    }
}
