//! Simulator for inexact stochastic parallel random-walk ADMM over a
//! time-varying agent graph, with an extreme-learning-machine beamforming
//! workload and the usual decentralized baselines.
//!
//! The usual entry point is [`engine::Simulation`] built from an
//! [`config::ExperimentConfig`].

pub mod admm;
pub mod baselines;
pub mod beamforming;
pub mod channel;
pub mod codec;
pub mod config;
pub mod elm;
pub mod engine;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod rng;
pub mod validate;
pub mod workload;

pub use config::{Algorithm, ExperimentConfig};
pub use engine::{compare, run_experiment, RunOutcome, Simulation, StopReason};
pub use error::{Error, Result};
pub use metrics::MetricRecord;
