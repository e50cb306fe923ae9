//! Toolkit for analyzing and mitigating contextual bias in multi-label
//! image classifiers.
//!
//! A classifier suffers from contextual bias when it leans on a frequently
//! co-occurring context category (say, "person") to recognize a target
//! category (say, "skis"), and consequently fails when the target appears
//! alone. This crate provides the full loop for studying that failure mode
//! at desk scale:
//!
//! - [`data`]: label matrices, dataset ingestion (plain matrix and
//!   COCO-style JSON), train/val splitting, per-pair image partitions, image
//!   preprocessing, and a seeded synthetic shape-dataset generator with
//!   controllable label co-occurrence.
//! - [`bias`]: the prediction-ratio bias score between category pairs and
//!   top-K biased pair identification.
//! - [`model`]: a small convolutional backbone with a global-average-pool
//!   classifier head, class activation maps (CAMs), the row-wise W_o/W_s
//!   head split with a running context-feature mean, and checkpointing.
//! - [`train`]: binary cross-entropy losses (plain, weighted, CAM overlap +
//!   regularization), batch partitioning, the stage-1 training recipe, and
//!   nine stage-2 mitigation trainers.
//! - [`eval`]: "exclusive"/"co-occur" test distributions, per-category
//!   average precision and top-3 recall, report aggregation, weight cosine
//!   similarity, and cross-dataset evaluation.
//! - [`gradcheck`]: central finite-difference utilities used to validate
//!   every composite loss gradient.
//!
//! All seeded operations are bit-reproducible across runs given identical
//! seeds.

pub mod bias;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod train;

pub use error::{Error, Result};
