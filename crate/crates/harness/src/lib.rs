//! Experiment harness for the particle-mesh EPDiff solver: configuration,
//! initial conditions, run driver, snapshots, convergence studies and
//! offline checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod converge;
pub mod diagnose;
pub mod error;
pub mod ic;
pub mod run;
pub mod snapshot;

pub use config::SimConfig;
pub use converge::{convergence_study, ConvergenceTable, Observable};
pub use diagnose::{diagnose, DiagnoseReport};
pub use error::{HarnessError, Result};
pub use run::{run, RunOutput, Sample, Simulation};
