#![cfg_attr(not(feature = "std"), no_std)]
//! Recycling trained sequence-to-sequence models across language pairs.
//!
//! The crate is `no_std` with `alloc`. It holds the subword vocabulary,
//! the parent-to-child vocabulary transformation, checkpoint values and
//! transfer initialization, a small encoder-decoder transformer with manual
//! backpropagation, BLEU with paired bootstrap resampling, and synthetic
//! cipher translation tasks. File formats and the command line live in the
//! `recycle` crate.

extern crate alloc;

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod nmt;
pub mod stats;
pub mod synth;
pub mod transform;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{build_vocabulary, SegmentedSentence, Vocabulary};
