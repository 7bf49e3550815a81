//! Desk-scale toxic-comment classifier.
//!
//! The crate is organized as a stack of small, testable layers:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff and
//!   a finite-difference gradient checker.
//! - [`text`]: normalization, vocabulary, sequence encoding, CSV corpus
//!   loading, stratified splits, and masked-language-model masking.
//! - [`encoder`]: a miniature transformer encoder with a masked-language-model
//!   head for self-supervised pretraining.
//! - [`head`]: feature weighting, a bidirectional recurrent layer, pooling,
//!   and the softmax classifier on top of the encoder.
//! - [`model`]: the end-to-end classifier wiring encoder and head together.
//! - [`train`]: optimizers, class-weighted loss, early stopping.
//! - [`tfidf`]: a TF-IDF + logistic-regression baseline.
//! - [`metrics`]: confusion-matrix metrics and side-by-side reports.
//! - [`checkpoint`]: versioned binary persistence for trained models.
//! - [`cli`]: the command-line front end used by the `toxseq` binary.
//!
//! Every stochastic routine takes an explicit [`rng::Rng`], so any result in
//! the crate can be reproduced from a single `u64` seed.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod head;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod tfidf;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{grad_check, Tape, Tensor, Var};
