//! Unsupervised point-cloud segmentation by language-guided, dual-branch
//! hierarchical learning-by-clustering.
//!
//! The crate works on precomputed inputs: per-point raw features, superpoint
//! partitions, entity masks with text embeddings, and optional distillation
//! targets. See [`train::run_pipeline`] for the end-to-end loop.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bank;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
