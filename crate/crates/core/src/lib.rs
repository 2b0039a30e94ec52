//! Phrase-to-box grounding for chest radiographs with anatomical
//! pre-training: dataset handling, a single-box grounding network with
//! optional low-rank adapters, the two-stage training protocol and an
//! evaluation harness with paired significance tests.

pub mod config_file;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod geometry;
pub mod model;
pub mod training;

pub use error::{Error, Result};
