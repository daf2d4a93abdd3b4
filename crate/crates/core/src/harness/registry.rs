//! Data-only descriptions of terminal and obstacle functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Obstacle, TerminalFn};

/// A scalar function of `x` chosen from a fixed family. Multi-dimensional
/// entries use the Euclidean norm for cones and bumps and the first
/// coordinate for calls, puts and sines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Constant {
        value: f64,
    },
    /// `intercept + slope·x`
    Affine {
        slope: Vec<f64>,
        intercept: f64,
    },
    /// `offset + scale·|x − center|`
    Cone {
        center: Vec<f64>,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + scale·min(|x − center|, cap)`
    CappedCone {
        center: Vec<f64>,
        scale: f64,
        cap: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude·exp(−|x − center|²/(2 width²))`
    GaussianBump {
        center: Vec<f64>,
        amplitude: f64,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `scale·min(max(x₀ − strike, 0), cap)`
    CappedCall {
        strike: f64,
        cap: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale·min(max(strike − x₀, 0), cap)`
    CappedPut {
        strike: f64,
        cap: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `offset + amplitude·sin(frequency·x₀ + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl FunctionSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FunctionSpec::Constant { value } => *value,
            FunctionSpec::Affine { slope, intercept } => {
                intercept + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            FunctionSpec::Cone { center, scale, offset } => offset + scale * dist(x, center),
            FunctionSpec::CappedCone {
                center,
                scale,
                cap,
                offset,
            } => offset + scale * dist(x, center).min(*cap),
            FunctionSpec::GaussianBump {
                center,
                amplitude,
                width,
                offset,
            } => {
                let r = dist(x, center);
                offset + amplitude * (-0.5 * r * r / (width * width)).exp()
            }
            FunctionSpec::CappedCall { strike, cap, scale } => scale * (x[0] - strike).max(0.0).min(*cap),
            FunctionSpec::CappedPut { strike, cap, scale } => scale * (strike - x[0]).max(0.0).min(*cap),
            FunctionSpec::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (frequency * x[0] + phase).sin(),
        }
    }

    /// A global Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self {
            FunctionSpec::Constant { .. } => 0.0,
            FunctionSpec::Affine { slope, .. } => slope.iter().map(|s| s * s).sum::<f64>().sqrt(),
            FunctionSpec::Cone { scale, .. } | FunctionSpec::CappedCone { scale, .. } => scale.abs(),
            // max of r·exp(−r²/2w²)/w² is exp(−1/2)/w
            FunctionSpec::GaussianBump { amplitude, width, .. } => {
                amplitude.abs() * (-0.5f64).exp() / width.abs()
            }
            FunctionSpec::CappedCall { scale, .. } | FunctionSpec::CappedPut { scale, .. } => scale.abs(),
            FunctionSpec::Sine {
                amplitude, frequency, ..
            } => (amplitude * frequency).abs(),
        }
    }

    /// Checks parameters against the problem dimension.
    pub fn check(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            FunctionSpec::Affine { slope, .. } if slope.len() != dim => {
                bad(format!("affine slope has {} entries, expected {dim}", slope.len()))
            }
            FunctionSpec::Cone { center, .. }
            | FunctionSpec::CappedCone { center, .. }
            | FunctionSpec::GaussianBump { center, .. }
                if center.len() != dim =>
            {
                bad(format!("center has {} entries, expected {dim}", center.len()))
            }
            FunctionSpec::CappedCone { cap, .. } | FunctionSpec::CappedCall { cap, .. } | FunctionSpec::CappedPut { cap, .. }
                if !(*cap >= 0.0) =>
            {
                bad(format!("cap must be nonnegative, got {cap}"))
            }
            FunctionSpec::GaussianBump { width, .. } if !(*width > 0.0) => {
                bad(format!("bump width must be positive, got {width}"))
            }
            _ => Ok(()),
        }
    }

    pub fn to_terminal(&self) -> TerminalFn {
        let f = self.clone();
        Arc::new(move |x: &[f64]| f.eval(x))
    }

    /// Time-independent obstacle.
    pub fn to_obstacle(&self) -> Obstacle {
        if let FunctionSpec::Constant { value } = self {
            return Obstacle::Constant(*value);
        }
        let f = self.clone();
        Obstacle::Field(Arc::new(move |_t: f64, x: &[f64]| f.eval(x)))
    }
}
