//! Experiment drivers, configuration and the acceptance checks behind the
//! `burgers-spectra` command-line tool.

pub mod checks;
pub mod commands;
pub mod config;

pub use checks::{run_criteria, run_criterion, CriterionResult, VerifyReport, CRITERIA};
pub use config::ExperimentConfig;
