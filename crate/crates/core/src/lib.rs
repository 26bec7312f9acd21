//! Mixed-bit weight quantization study for latent world-model planning.

pub mod alloc;
pub mod artifacts;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod quant;
pub mod report;
pub mod rng;
pub mod stats;
pub mod store;
pub mod svg;
pub mod worldmodel;

pub use error::{Error, Result};
