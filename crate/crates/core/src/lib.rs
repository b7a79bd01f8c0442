//! Feedback stabilization of finite ensembles of Bloch equations sharing a
//! single transverse control.

pub mod analysis;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod spectral;

pub use dynamics::{ControlLaw, IntegratorConfig, Method, Trajectory};
pub use ensemble::{
    ControlValue, EnsembleState, FrequencySet, Pole, SpinState, WeightVector,
};
pub use error::{Error, Result};
pub use experiment::{RunSummary, ScenarioConfig};
pub use spectral::{Classification, Equilibrium, EquilibriumReport};
