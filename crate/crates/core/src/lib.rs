//! Continual knowledge-graph embedding with scale-aware dimension growth.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod expander;
pub mod footprint;
pub mod kg;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scale;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
