//! A desk-scale neural machine translation toolkit: an attentional
//! encoder-decoder whose per-step predictions can be augmented with discrete
//! probabilistic lexicons, either as a log-domain bias on the softmax or by
//! linear interpolation, plus lexicon induction (EM / dictionary / fill-up
//! hybrid), beam-search decoding with unknown-word replacement, and an
//! evaluation suite (BLEU, NIST, rare-word recall, paired bootstrap,
//! attention entropy).

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
mod files;
pub mod graph;
pub mod inference;
pub mod lexicon;
pub mod model;
pub mod network;
pub mod train;

pub use error::{Error, Result};
pub use files::write_atomic as write_file_atomic;
