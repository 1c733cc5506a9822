//! Deterministic simulator of multi-path adaptive video streaming.

pub mod bridge;
pub mod engine;
pub mod env;
pub mod hyperparams;
pub mod media;
pub mod policy;
pub mod runner;
pub mod trace;
