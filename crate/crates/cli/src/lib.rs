//! Experiment orchestration for metamorphosis-regularized reconstruction:
//! a flat config format, forward simulation, TDM-INV and baseline runs,
//! grid search and the files they produce.

pub mod artifacts;
pub mod experiment;
pub mod search;
pub mod spec;

pub use experiment::{run_experiment, Problem, Report, Scored};
pub use search::{grid_search, GridSearch};
pub use spec::ExperimentSpec;
