//! Compressible tumor growth with nutrients: a finite-volume simulator,
//! the monitors of its stiff-pressure estimates, and the incompressible
//! (Hele-Shaw) limit checks.
//!
//! Data-parallel kernels run on rayon with the `parallel` feature (default);
//! without it every kernel and batch runs sequentially with identical results.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
pub mod error;
pub mod exec;
pub mod grid;
pub mod limit;
pub mod linalg;
pub mod model;
pub mod monitors;
pub mod output;
pub mod quadrature;
pub mod solver;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{Field, Grid};
pub use model::{ModelParams, ReactionSpec};
pub use solver::{run, RunConfig, RunOutput, State, Trajectory};
