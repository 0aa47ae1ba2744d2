pub mod binary;
pub mod codec;
pub mod error;
pub mod grid;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod predictor;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
