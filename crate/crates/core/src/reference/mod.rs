//! Independent oracles for the scheme.

mod cole_hopf;
mod fd;
mod monte_carlo;

pub use cole_hopf::{cole_hopf_reference, cole_hopf_reference_with_panels};
pub use fd::{fd_hjb_finite_controls, fd_vi_solve, ControlSetApprox, FDSolverConfig, FdReference};
pub use monte_carlo::{mc_expectation, McEstimate};

pub(crate) use fd::{CostTable, RowTable, StepSystem};
