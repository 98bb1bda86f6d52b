//! Deterministic single-process simulator of vertical federated learning
//! with communication-efficient feature selection.
//!
//! Parties hold disjoint feature columns of the same samples and train
//! local networks whose outputs (embeddings) feed a server network that
//! holds the labels. Feature selection runs in three stages: ordinary
//! pre-training, a server-local group lasso over frozen embeddings that
//! picks significant embedding components, and a party-local group lasso
//! that keeps only the features needed to reproduce those components.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod regularization;
pub mod seed;
pub mod selectors;

pub use error::{Error, Result};
