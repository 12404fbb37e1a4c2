//! Topology-guided counterfactual segmentation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod rng;
pub mod segmenter;
pub mod topology;

pub use error::{Error, Result};
pub use exec::Execution;
