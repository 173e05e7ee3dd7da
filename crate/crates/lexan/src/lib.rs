//! Joint Chinese lexical analysis: word segmentation, POS tagging and named
//! entity recognition as a single character-level sequence labeling task.
//!
//! The model is a stacked bidirectional GRU encoder over character embeddings
//! with a linear-chain CRF on top. Decoding is constrained so that the output
//! is always a legal IOB2 label sequence and therefore always a valid
//! word-level analysis.
//!
//! Modules map onto the stages of the pipeline:
//!
//! * [`tagset`] — tag inventory, IOB2 label space, transition legality
//! * [`numkernel`] — dense vector/matrix primitives
//! * [`network`] — embedding, Bi-GRU stack, emission projection
//! * [`crf`] — sequence scoring, likelihood, constrained Viterbi
//! * [`corpus`] — annotated-text formats and vocabulary construction
//! * [`training`] — SGD, balanced corpus sampling, CRF fine-tuning
//! * [`eval`] — word-level accuracy and NER precision/recall/F1
//! * [`model`] — the binary model file format
//! * [`reference`] — slow, independent reference implementations used to
//!   verify the fast paths

pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod model;
pub mod network;
pub mod numkernel;
pub mod reference;
pub mod tagset;
pub mod training;

pub use error::{Error, Result};
