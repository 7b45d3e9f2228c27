//! Hierarchical transformers over sequences of timestamped, categorised
//! documents for multi-label coding.
//!
//! The pipeline: [`corpus`] ingestion or synthetic generation, word-level
//! [`tokenizer`] and chunking, budgeted chunk [`selection`] with metadata
//! indices, the [`model`] itself, [`training`] with a one-cycle schedule and
//! early stopping, and [`metrics`] for evaluation.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod selection;
pub mod tokenizer;
pub mod training;

pub use error::{HtdsError, Result};
