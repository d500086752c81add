//! Decoder-only transformer classifier for C/C++ vulnerability detection.
//!
//! The crate is organized bottom-up: [`tensor`] provides reverse-mode
//! autodiff, [`tokenizer`] a BPE tokenizer with atomic C domain tokens,
//! [`model`] the classifier itself, [`training`] the fine-tuning loop,
//! [`datapipe`] dataset integration, [`metrics`] evaluation, and [`cli`] the
//! command-line wiring.

// Comparisons are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datapipe;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
