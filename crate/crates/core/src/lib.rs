//! Splitting scheme for obstacle problems with convex, coercive Hamiltonians,
//! with quadrature, interpolation, reference solvers and an experiment harness.
//!
//! The scheme marches `u(t) = min{S_t(Δ)u(t+Δ), f(t)}` backward from
//! `u(T) = U`, where `S_t(Δ)` pays `Δ·L` for a deterministic jump and then
//! takes a frozen-coefficient Gaussian expectation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod harness;
pub mod operator;
pub mod quadrature;
pub mod reference;
pub mod scheme;
pub mod switching;

pub use error::{Error, Result};
pub use grid::{GridFunction, Interpolation, ReportingRegion, SpatialGrid};
pub use hamiltonian::{
    effective_control_bound, legendre, DualEvaluation, GrowthCertificate, HamiltonianKind, Obstacle,
    ProblemSpec,
};
pub use operator::{apply, frozen_expectation, OperatorConfig};
pub use quadrature::QuadratureRule;
pub use scheme::{eval_solution, residual_sbar, solve, SchemeSolution, TimeSlices};
pub use switching::{solve_switching, switching_residual, SwitchingConfig, SwitchingSolution};
