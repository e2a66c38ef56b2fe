//! Span localization in instructional videos with two coupled predictors.
//!
//! A visual predictor scores video frames, a textual predictor scores subtitle
//! tokens, and during training each one's decoded span is mapped through the
//! subtitle timeline into a weighted pseudo label for the other.
//!
//! Module map:
//! - [`data`]: corpus records, validation, JSONL IO
//! - [`synth`]: deterministic synthetic corpus generation
//! - [`timeline`]: frame/subtitle/token lookups, IoU, metrics
//! - [`tape`]: small reverse-mode autodiff over dense matrices
//! - [`network`]: the fusion network and its parameters
//! - [`objective`]: span losses, decoding, and mutual transfer
//! - [`engine`]: training, evaluation, ablation
//! - [`checkpoint`]: parameter serialization
//! - [`cli`]: the command-line front end

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod network;
pub mod objective;
pub mod synth;
pub mod tape;
pub mod timeline;

pub use error::{Error, Result};
