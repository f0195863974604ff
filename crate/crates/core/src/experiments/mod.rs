//! Config-driven experiments and their reports.

pub mod config;
pub mod ensemble;
pub mod report;
pub mod runners;
pub mod selftest;

pub use config::{ExperimentConfig, SubgroupDescriptor, TransportKind};
pub use report::{ExperimentReport, Table, Verdict, VERSION};
pub use runners::{
    run_bs_detector, run_distribution, run_family_convergence, run_jump_demo, run_refinement, run_stokes,
    run_subgroup_criterion,
};
pub use selftest::run_selftest;
