//! Experiment harness for the beamforming solvers: seeded channel sweeps,
//! shared random initializations, CSV output and summary statistics.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod summary;
pub mod table;

pub use error::{BenchError, Result};
pub use experiment::{run_experiment, Algo, ExperimentOutput, ExperimentSpec, ResultRow};
pub use summary::{summarize, SummaryRow};
