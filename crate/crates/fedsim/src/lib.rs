//! Deterministic simulator for multi-aggregator federated learning over a
//! trust-weighted Byzantine-fault-tolerant ledger.
//!
//! Edge servers collect models from heterogeneous trainers, aggregate them
//! at self-chosen frequencies, and agree on a global model once per block
//! interval through a weighted prepare/commit protocol with trust-score
//! miner election. Each server may tune its strategy (aggregation
//! frequency, offload acceptance, weighting) with a DDPG agent learning
//! from a replay buffer shared across servers.
//!
//! All core math is generic over the scalar type ([`scalar::Scalar`],
//! `f32` or `f64`); the CLI and builtin scenarios use `f64` via the
//! aliases at the crate root.

pub mod aggregation;
pub mod cli;
pub mod config;
pub mod consensus;
pub mod data;
pub mod drl;
pub mod error;
pub mod ledger;
pub mod metrics;
pub mod orchestrator;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod training;

pub use error::{Error, Result};

/// Concrete `f64` instantiations used by the CLI and builtin scenarios.
pub type Params64 = params::ModelParams<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Chain64 = ledger::Chain<f64>;
pub type Block64 = ledger::GlobalAggBlock<f64>;
pub type Transaction64 = ledger::LocalAggTransaction<f64>;
pub type Strategy64 = aggregation::StrategyParams<f64>;
pub type Agent64 = drl::DdpgAgent<f64>;
pub type Kernel64 = sim::Kernel<f64>;

/// `f32` instantiations of the core value types.
pub type Params32 = params::ModelParams<f32>;
pub type Strategy32 = aggregation::StrategyParams<f32>;
