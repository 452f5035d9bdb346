//! Benchmark simulator for federated learning over proximity-grouped,
//! non-IID data.
//!
//! The pipeline: fetch an image classification dataset, split it across `k`
//! geographic subregions with a configurable degree of label skew
//! (heterogeneous between regions, homogeneous between the devices inside a
//! region), train an MLP with FedAvg, FedProx or Scaffold, and report
//! accuracy statistics over multiple seeds.
//!
//! Everything is deterministic in the experiment seed: partitioning, device
//! assignment, model init and every device's batch order derive their own
//! RNG streams from it, and reductions run in a fixed order, so sequential
//! and parallel runs agree bit for bit.

pub mod cli;
pub mod datasets;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod partitioning;
pub mod seed;

pub use error::{Error, Result};
