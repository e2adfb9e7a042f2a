//! Reverse training toolkit.
//!
//! - [`textseg`]: word splitting, vocabularies, token sequences, segmentations
//! - [`reversal`]: token, word, entity-preserving and random-segment reversal
//! - [`corpus`]: JSONL documents, gazetteer annotation, mixed-direction streams
//! - [`symbolic`]: the symbolic reverse task generator
//! - [`lm`]: a small decoder-only transformer with hand-written gradients
//! - [`eval`]: metrics and the experiment runner
//! - [`cli`]: the `reverso` command line

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod reversal;
pub mod rng;
pub mod symbolic;
pub mod textseg;
pub mod lm;

pub use error::{Error, Result};
