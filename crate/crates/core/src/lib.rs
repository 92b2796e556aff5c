//! Low-rank Student-t process mixtures for gridded spatiotemporal extremes.

pub mod basis;
pub mod bspline;
pub mod bundle;
pub mod dist;
pub mod error;
pub mod export;
pub mod hotspot;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod synthetic;

pub use error::{Error, Result};
