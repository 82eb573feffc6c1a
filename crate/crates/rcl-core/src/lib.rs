//! Contrastive-learning engine for semantic search.
//!
//! The pipeline has two stages. Stage one trains a family of entropy
//! models — encoders whose objective adds an entropy term over each
//! query's off-diagonal similarity distribution — and materializes one
//! frozen "augmented" embedding per sentence and model into stores. Stage
//! two trains the final encoder with the contrastive objective plus two
//! regulator terms per store, which anchor each live embedding to its own
//! augmented embedding against the rest of the batch. An evaluation
//! harness reports Top-K accuracy, MAP, Spearman correlation, and
//! embedding-geometry diagnostics (alignment, uniformity, anisotropy).
//!
//! Everything is seeded and reduction orders are fixed, so identical
//! configs reproduce bit-identical artifacts with or without the
//! `parallel` feature.

pub mod augmentation;
pub mod backend;
pub mod datasets;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod objectives;
pub mod rng;
pub mod textfeat;
pub mod trainer;

pub use error::{Error, Result};
