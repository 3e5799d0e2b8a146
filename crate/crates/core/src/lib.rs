//! Spectrum-based failure attribution for multi-agent system runs.
//!
//! The pipeline replays (or simulates) a failing task several times,
//! abstracts every run into agent-action-state triples, clusters
//! equivalent triples, and ranks the triples of the failing run by how
//! strongly their occurrence pattern tracks failure.

pub mod abstraction;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod replay;
pub mod simulate;
pub mod spectrum;
pub mod suite_file;
pub mod sweep;

pub use error::{Error, Result};
