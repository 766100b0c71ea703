//! Graph varying-coefficient networks for estimating dose-response curves
//! of a continuous treatment on a binary outcome, with graph-structured
//! covariates.

pub mod analysis;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod netblocks;
pub mod numerics;
pub mod pipeline;
pub mod synthbench;
pub mod vchead;

pub use error::{Error, Result};
