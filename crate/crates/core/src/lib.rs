//! Transformer encoder classification with teacher-student knowledge
//! distillation, built on a small reverse-mode autodiff engine.
//!
//! Module map:
//!
//! - [`tensor`], [`autograd`], [`gradcheck`]: `f64` tensors, recorded graph, finite-difference oracle
//! - [`model`]: encoder classifier, positional encoding, attention, checkpoints
//! - [`distill`]: temperature softening, losses, soft-label store
//! - [`train`]: AdamW, classifier / distilled / masked-LM training loops, evaluation
//! - [`data`]: text normalization, vocabulary, TSV loading, synthetic tasks, batching
//! - [`metrics`]: confusion matrix, accuracy, precision/recall, F1
//! - [`ablation`]: three-arm comparison harness

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod autograd;
pub mod data;
pub mod distill;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod settings;
pub mod tensor;
pub mod train;

pub use autograd::{GradientMap, Graph, ParamId, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
