//! Generating answers from ranked answer-sentence candidates.
//!
//! The pipeline ranks a question's candidate sentences ([`selector`]), joins
//! the question and the top-k candidates into a source text ([`genbuild`]),
//! and decodes an answer with a sequence-to-sequence model ([`seq2seq`],
//! [`decode`]). [`metrics`] covers ranking accuracy, BLEU, ROUGE-L and answer
//! lengths.

pub mod corpus;
pub mod decode;
pub mod error;
pub mod fixtures;
pub mod genbuild;
pub mod metrics;
pub mod selector;
pub mod seq2seq;
pub mod synthetic;
pub mod textproc;

pub use error::{Error, Result};
