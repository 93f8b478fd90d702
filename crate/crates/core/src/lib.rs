//! Pollinator visit analysis: flower detection, pose tracking, visit
//! extraction, re-identification crops and embeddings, evaluation, and a
//! synthetic assay generator.

pub mod cli;
pub mod config;
pub mod crop;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod flowers;
pub mod formats;
pub mod model;
pub mod pipeline;
pub mod splits;
pub mod synth;
pub mod tracking;
pub mod visits;

pub use error::{Error, Result};
pub use model::*;
