//! Gauss–Hermite rules normalized for standard Gaussian expectations.

use crate::error::{Error, Result};
use crate::hamiltonian::{Vector, MAX_DIM};

/// Above this order the Hermite recurrence underflows at the outer nodes.
pub const MAX_ORDER: usize = 150;

/// Tensor-product Gauss–Hermite rule: `E[φ(ξ)] ≈ Σ_k w_k φ(node_k)` for
/// `ξ ~ N(0, I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub dim: usize,
    pub nodes: Vec<Vector>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize, dim: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER || dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidConfig(format!(
                "quadrature order {order} / dimension {dim} not supported"
            )));
        }
        let (x, w) = hermite_1d(order);
        let mut nodes = Vec::with_capacity(order.pow(dim as u32));
        let mut weights = Vec::with_capacity(order.pow(dim as u32));
        if dim == 1 {
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push([*xi, 0.0]);
                weights.push(*wi);
            }
        } else {
            for (xi, wi) in x.iter().zip(&w) {
                for (xj, wj) in x.iter().zip(&w) {
                    nodes.push([*xi, *xj]);
                    weights.push(wi * wj);
                }
            }
        }
        Ok(QuadratureRule {
            order,
            dim,
            nodes,
            weights,
        })
    }

    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| w * f(&n[..self.dim]))
            .sum()
    }
}

/// Nodes and weights for `E[g(ξ)]`, `ξ ~ N(0,1)`, by Newton iteration on the
/// orthonormal Hermite recurrence. Nodes ascend; the rule is symmetric.
/// Reliable for `n <= MAX_ORDER`.
pub fn hermite_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Physicists' rule for ∫ e^{-x²} g(x) dx, rescaled at the end.
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = std::f64::consts::PI.sqrt();
    let mut nodes: Vec<f64> = x.iter().map(|v| v * sqrt2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / norm).collect();
    nodes.reverse();
    weights.reverse();
    // tidy the normalization; the raw sum is 1 to ~1e-15
    let total: f64 = weights.iter().sum();
    for wi in &mut weights {
        *wi /= total;
    }
    (nodes, weights)
}
