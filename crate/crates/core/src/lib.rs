//! Measure how well a language model's token-probability confidence agrees
//! with the certainty it states in words.
//!
//! The pipeline: load multiple-choice [`dataset`]s, elicit an answer and read
//! the answer-position distribution through a [`backends::Backend`], compute
//! the adjusted internal [`confidence`], ask the model how certain it is with a
//! [`prompting`] template, parse the reply with [`certainty`], and summarize
//! with [`analysis`]. [`runner`] wires these together.

pub mod analysis;
pub mod backends;
pub mod certainty;
pub mod confidence;
pub mod dataset;
pub mod error;
pub mod prompting;
pub mod runner;

pub use error::{Error, Result};
