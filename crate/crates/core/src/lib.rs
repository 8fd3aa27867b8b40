//! Review-guided answer generation for product questions.
//!
//! The pipeline retrieves review snippets relevant to a question with Word
//! Mover's Distance, weights the snippet vocabulary, and conditions a gated
//! convolutional encoder-decoder on it through per-layer attention and a
//! learned gate. Training, beam-search decoding and automatic metrics are
//! included.

pub mod corpus;
pub mod decoding;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
