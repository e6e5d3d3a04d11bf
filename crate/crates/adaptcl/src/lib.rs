//! Deterministic simulator and library for heterogeneous multi-party
//! collaborative learning with dynamic adaptive sub-model pruning.
//!
//! Workers hold private shards of a synthetic task and train sub-models
//! pruned from a shared dense base model. A simulated environment assigns
//! each worker a bandwidth and compute profile; the server learns per-worker
//! pruned rates from observed update times so that every worker converges to
//! the fastest worker's round time. FedAVG (plain and sparse), FedAsync and
//! SSP baselines run on the same simulated clock for comparison.

pub mod aggregate;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod prune;
pub mod rate;
pub mod run;
pub mod seeds;

pub use config::{ExperimentConfig, Policy};
pub use error::{Error, Result};
pub use run::{run, run_policy, RunOutput};
