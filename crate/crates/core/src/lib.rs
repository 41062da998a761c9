//! Reconstruction-based anomaly detection over windowed video feature
//! sequences with an LSTM autoencoder.
//!
//! The pipeline runs frame enhancement ([`clahe`]), per-frame featurization
//! ([`features`]), clip windowing and confidence-rate labeling ([`dataset`]),
//! autoencoder training on normal clips ([`autoencoder`], [`train`]) and
//! ROC-based evaluation ([`eval`]). [`pipeline`] wires the stages together
//! behind a single config.

pub mod autoencoder;
pub mod checkpoint;
pub mod clahe;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod image;
pub mod lstm;
pub mod pipeline;
pub mod synth;
pub mod train;

#[cfg(test)]
mod reference;

pub use error::{Error, Result};
