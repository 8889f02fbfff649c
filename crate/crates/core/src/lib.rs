//! Session-level behavioral-code prediction for therapy transcripts.
//!
//! The crate turns diarized, word-timed transcripts into binary predictions
//! for the eleven CTRS codes and the total score. Every stage is pure
//! computation over in-memory data; file formats, the command line and
//! threading live in the `ctrs` companion crate.
//!
//! Pipeline stages, in order:
//!
//! - [`segmenter`]: pause-based turn splitting, then a linear-chain boundary
//!   labeler that cuts fragments into utterances.
//! - [`tagger`]: dialog-act tagging over the session (chain CRF) and
//!   per-utterance MI-code classification.
//! - [`features`]: tf-idf, tag-count blocks, word|TAG augmentation,
//!   concatenation, F-test selection and z-scaling.
//! - [`classify`]: class-weighted linear SVM.
//! - [`eval`]: stratified folds, pooled F1, the cross-validation protocol and
//!   the combined 5x2cv F test.
//!
//! [`synth`] generates seeded corpora with planted, context-dependent signal
//! and [`pipeline`] wires everything together.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod classify;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod features;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod segmenter;
pub mod sequence;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
