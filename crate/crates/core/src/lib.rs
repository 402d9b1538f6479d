//! Hierarchical image-to-IDX dataset generation.

pub mod acquisition;
pub mod curation;
pub mod error;
pub mod eval;
pub mod export;
pub mod fixtures;
pub mod hierarchy;
pub mod raster;
pub mod review;
pub mod scalar;
pub mod semantics;
pub mod similarity;
pub mod transforms;
pub mod workflow;

pub use error::{Error, Result};
pub use hierarchy::CategoryHierarchy;
pub use scalar::Scalar;

/// The curation agent at the precision used by the CLI and server.
pub type DqnAgent = curation::Agent<f64>;
pub type Metrics = eval::MetricsReport<f64>;
