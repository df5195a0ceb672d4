//! FPL: federated pair-wise learning-to-rank for top-N recommendation.
//!
//! A server holds the item-side factorization model ⟨Q, b⟩ while every
//! client keeps its own user vector and consumption history. Training
//! proceeds in Distribution -> Computation -> Transmission -> Aggregation
//! rounds; each client controls, via the disclosure probability π, how many
//! positive-item updates it transmits.

pub mod baselines;
pub mod checkpoint;
pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod model;
pub mod rng;
pub mod server;

pub use error::{FplError, Result};
