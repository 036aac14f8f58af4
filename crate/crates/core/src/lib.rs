//! Tokenization, value encoding and evaluation toolkit for clinical event
//! timelines.

pub mod error;
pub mod event_model;
pub mod io;
pub mod metrics_stats;
pub mod outcomes;
pub mod pipeline;
pub mod probes;
pub mod rng;
pub mod synth;
pub mod stats_fit;
pub mod tokenizer;
pub mod value_encoders;
pub mod vocab_arms;

pub use error::{Error, Result};
