//! Blind detection of lossy compression in audio.
//!
//! The pipeline fabricates paired lossless/lossy datasets with an external
//! transcoder ([`dataset`]), turns 2-second windows into log spectrograms
//! ([`spectral`]), trains a CNN + BiLSTM classifier that can randomly mask
//! the high band during training ([`model`], [`training`]), scores whole
//! files by averaging window probabilities ([`inference`]) and reports
//! accuracy tables, F1 curves and saliency maps ([`evaluation`]).
//!
//! The `lossy-detect` binary in [`cli`] drives the same steps from flags or a
//! config file.

pub mod audio;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod inference;
pub mod model;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
