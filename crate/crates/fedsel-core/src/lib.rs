//! Simulation library for client selection in federated learning under
//! joint data and latency heterogeneity.
//!
//! The library generates synthetic quadratic (linear-regression) federated
//! problems, models per-client communication delays, quantifies pairwise
//! gradient dissimilarity between clients, and runs a FedAvg-style training
//! loop under pluggable client-selection strategies. The two delay-aware
//! strategies pick either a fixed client set (by minimizing a submodular
//! delay/bias trade-off) or a sampling distribution over clients (by
//! projected gradient descent on the probability simplex).

pub mod datagen;
pub mod delays;
pub mod engine;
mod error;
pub mod heterogeneity;
pub mod linalg;
pub mod roster;
pub mod selection;

pub use error::{Error, Result};
pub use roster::{round_delay, ClientId, ClientRoster, ModelVector, RoundRecord, SelectionDecision};
