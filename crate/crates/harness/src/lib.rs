//! Config-driven experiment runner around `lmaps-core`.

pub mod config;
pub mod error;
pub mod runner;
pub mod store;
pub mod svg;
pub mod sweep;

pub use config::{ExperimentConfig, LoadedConfig};
pub use error::HarnessError;
pub use runner::{execute, Outcome};
