//! Gazetteer-adapted integration network (GAIN) for complex named entity
//! recognition, built at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: tag scheme, sentences, CoNLL I/O, augmentation and synthetic data.
//! - [`gazetteer`]: label-partitioned surface store, token trie, one-hot match features
//!   and coverage analytics.
//! - [`numcore`]: a small reverse-mode autodiff core over `f64` tensors with AdamW.
//! - [`model`]: encoder, gazetteer network, integration and the three classifier heads.
//! - [`train`]: encoder pre-training, the two-stage adaptation/training procedure and
//!   checkpoints.
//! - [`ensemble`], [`metrics`]: aggregation and entity-level evaluation.
//! - [`experiment`]: end-to-end drivers (GAIN vs. baseline, coverage sweep).

pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod gazetteer;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod seed;
pub mod train;

pub use error::{GainError, Result};
