//! Scheduled interleaved speech–text training for unit-based speech-to-speech
//! translation, at desk scale.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory buffers. File formats, checkpoints on disk and the CLI live in
//! the companion `silt` crate.
//!
//! Pipeline, bottom-up:
//!
//! * [`vocab`]: byte-level BPE and the joint speech/text id space.
//! * [`quantizer`]: k-means codebooks turning frame features into units.
//! * [`ctc_align`]: CTC Viterbi forced alignment aggregated to word spans.
//! * [`interleave`]: word-level replacement of unit spans by text tokens,
//!   plus the decaying text-ratio schedule.
//! * [`cot`]: chain-of-thought sequence layout and loss masks.
//! * [`synth`]: toy parallel corpora with gold alignments and posteriors.
//! * [`model`]: a small decoder-only transformer with hand-written backprop,
//!   Adam and the training loop.
//! * [`eval`]: unit BLEU, length-gap and representation-similarity analyses.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod cot;
pub mod ctc_align;
pub mod error;
pub mod eval;
pub mod interleave;
pub mod model;
pub mod quantizer;
pub mod rng;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
