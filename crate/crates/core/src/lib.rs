//! Simulator for federated learning over a passive optical network.
//!
//! Two aggregation modes are modeled side by side:
//!
//! * **classical**: every selected client's update crosses the PON upstream
//!   and the parameter server applies sample-weighted FedAvg;
//! * **sfl**: each ONU first forms the sample-weighted sum of its clients'
//!   models and forwards only that, and the server divides the sum of those
//!   aggregates by the total sample count.
//!
//! Both produce the same global model on the same set of updates; they differ
//! in how much upstream traffic crosses the shared slice and therefore in how
//! many clients finish before the synchronization threshold.

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod error;
pub mod orchestrator;
pub mod ponsim;
pub mod reporting;
pub mod streams;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use orchestrator::{
    compare_modes, run_experiment, Comparison, Experiment, ExperimentConfig, Mode, RoundRecord,
    SelectionPolicy,
};
pub use types::{ClientId, ClientUpdate, GlobalModel, ModelParams, OnuAggregate, Topology, TimingSample};
