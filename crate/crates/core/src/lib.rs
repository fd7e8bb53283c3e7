//! Adversarial speech example generation and detection.
//!
//! The crate covers the full loop: synthesizing a desk-scale corpus, training
//! small victim recognizers, attacking them with a gradient-based (white-box)
//! and a genetic (black-box) method, assembling balanced normal/adversarial
//! datasets, and training a small-kernel CNN on padded MFCC maps to tell the
//! two apart.

pub mod attacks;
pub mod audio;
pub mod ctc;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod frontend;
pub mod nn;
pub mod pipeline;
mod par;
pub mod seeds;
pub mod vad;
pub mod victim;

pub use error::{Error, Result};
