//! Anomalous sound detection with a serial outlier-exposure / inlier-modeling
//! pipeline.
//!
//! An encoder is trained per machine type with two binary cross-entropy
//! objectives: a per-element logistic loss over the product IDs of the target
//! machine type, and a machine-type loss computed from the squared norm of the
//! embedding. A Gaussian mixture model or a local-outlier-factor model is then
//! fitted per product ID on embeddings of normal clips, and each clip is scored
//! by aggregating the inlier deviation of its overlapping segments.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod embed_export;
pub mod error;
pub mod features;
pub mod inlier;
pub mod metrics;
pub mod nnet;
pub mod objective;
pub mod scoring;
pub mod train;
mod util;

pub use error::{AsdError, Result};
