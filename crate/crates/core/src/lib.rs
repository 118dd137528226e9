pub mod aggregation;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scene;
pub mod visibility;

pub use error::{Error, Result};
