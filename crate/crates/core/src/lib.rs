//! Batched beam search for attention encoder-decoder models with CTC and
//! language-model shallow fusion.
//!
//! The scalar engine in [`beam::search_scalar`] expands one hypothesis at a
//! time from a queue. [`beam::search_vectorized`] keeps all `S x B`
//! hypotheses of a batch in dense matrices and advances them together. Both
//! produce the same hypotheses and scores.

pub mod beam;
pub mod error;
pub mod scorers;
pub mod synth;
pub mod tensor_ops;

pub use error::{Error, Result};
