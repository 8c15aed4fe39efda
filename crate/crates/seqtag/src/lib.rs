//! A dialog-act sequence tagger.
//!
//! Conversations are split into fixed-length context windows; a seq2seq
//! model (hierarchical GRU encoders, guided attention, beam-search decoding,
//! expected-risk fine-tuning) or a linear-chain CRF baseline predicts one
//! dialog-act tag per utterance. Everything runs on a small built-in
//! reverse-mode autodiff engine in 64-bit floats with a fixed, seedable RNG,
//! so runs are reproducible bit for bit.

pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod parallel;

pub use error::{Error, Result};
