//! Unsupervised embedding learning via softened similarity, on synthetic
//! multi-camera identity data.
//!
//! The training signal is a non-parametric classifier over a memory bank of
//! per-image features: each image starts as its own class, and softened
//! target distributions gradually pull each image toward its k reliable
//! neighbors, mined by a composite dissimilarity of global distance, part
//! distance, and a cross-camera encouragement term. Runs are evaluated with
//! standard re-identification ranking metrics (CMC, mAP) on a held-out
//! query/gallery split.

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod mat;
pub mod memory;
pub mod persist;
pub mod pipeline;
pub mod rng;
pub mod similarity;
pub mod softloss;
pub mod sweep;
pub mod synthgen;

pub use error::{Error, ErrorCategory, Result};
