//! Configuration, experiment drivers and reports.

pub mod config;
pub mod convergence;
pub mod properties;
pub mod registry;
pub mod study;

pub use config::{Experiment, ExperimentConfig, OracleKind};
pub use convergence::{fd_oracle, run_convergence, ConvergenceReport, ConvergenceRow, Verdict};
pub use properties::{run_property_suite, PropertyOptions, PropertyReport, SuiteResult};
pub use registry::FunctionSpec;
pub use study::{run_switching_study, SwitchingStudy};
