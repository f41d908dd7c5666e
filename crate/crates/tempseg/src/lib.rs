//! Unsupervised temporal action segmentation.
//!
//! The pipeline discovers recurring sub-actions in collections of long,
//! feature-encoded videos without any labels. Frames are embedded by a small
//! network trained to regress each frame's relative timestamp, the embedded
//! frames are clustered and the clusters ordered by their mean timestamp, and
//! each video is decoded under the constraint that cluster order is respected
//! within the video. An optional background model drops frames far from every
//! cluster, and a bag-of-words stage over frame embeddings groups videos into
//! activities when even the activity labels are unknown.
//!
//! [`pipeline`] wires the stages together; the individual modules are usable
//! on their own.

pub mod activity;
pub mod clustering;
pub mod dataset;
pub mod decoding;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod seeds;

pub use error::{Error, Result};
