//! Configuration-driven experiments and their file outputs.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ScenarioConfig, Selection, WeightScheme};
pub use runner::{
    run_basin, run_fourier, run_scenario, run_spectrum, run_truncated, simulate, RunOutput,
    RunSummary,
};
