//! Robust composed-retrieval training under noisy triplet correspondence.
//!
//! The pipeline generates a synthetic embedding world with shuffled (noisy)
//! triplets, labels a small anchor subset with an expert arbiter, trains a
//! Monte Carlo dropout proxy on that anchor set, and then trains composition
//! heads with a confidence-gated two-stream contrastive objective.

pub mod cli;
pub mod config;
pub mod dsr;
pub mod eki;
pub mod epa;
pub mod error;
pub mod eval;
pub mod numkit;
pub mod world;

pub use error::{Error, Result};
