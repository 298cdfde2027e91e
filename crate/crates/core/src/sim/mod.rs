//! Simulation studies: data-generating processes, a seeded replication
//! runner and the metrics it reports.

mod config;
mod dgp;
mod study;

pub use config::{Setting, SimConfig};
pub use dgp::{analytic_theta_star, generate, numeric_theta_star, Generated, OracleTheta};
pub use study::{
    run_study, run_study_with, study_theta_star, EstimatorSpec, EstimatorSummary, FitMetrics, Plugin,
    ReplicateRecord, SimResult,
};
