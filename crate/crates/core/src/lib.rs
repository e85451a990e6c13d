//! Evidential classification with Dirichlet uncertainty and risk-aware
//! decisions.

pub mod checkpoint;
pub mod data;
pub mod dirichlet;
mod error;
pub mod fusion;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod risk;
pub mod train;

pub use error::{CheckpointError, DataError, EdlError, Result};
