//! Desk-scale open-vocabulary human-object-interaction (HOI) detection.
//!
//! The crate implements an end-to-end detector built around two mechanisms:
//! interaction-aware prompt generation (a common prompt plus a compact bank
//! of rank-one interaction prompts, selected per image by key similarity) and
//! concept calibration (description-embedding clustering driving hard
//! negative sampling during classification training). Everything runs on a
//! small reverse-mode autodiff tensor core so that training, evaluation and
//! the diagnostic tooling are exactly reproducible on one CPU core.
//!
//! Module map:
//! - [`numeric`] — dense tensors, reverse-mode differentiation, top-k.
//! - [`prompts`] — prompt bank, key MLP, input-adaptive selection.
//! - [`net`] — prompt-conditioned encoder, HOI query decoder, heads.
//! - [`concepts`] — vocabulary files, k-means clustering, negative sampling.
//! - [`train`] — Hungarian matching, losses, the training loop.
//! - [`eval`] — IoU-gated mAP over category splits, selection diagnostics.
//! - [`harness`] — config, synthetic data, checkpoints, the CLI.
//!
//! The numeric core is generic over the scalar type; the rest of the crate
//! works in `f64` through the aliases below.

pub mod concepts;
pub mod error;
pub mod eval;
pub mod harness;
pub mod net;
pub mod numeric;
pub mod prompts;
pub mod train;

pub use error::{Error, Result};

/// Scalar type used by the detector itself.
pub type Scalar = f64;

/// Dense tensor over [`Scalar`].
pub type Tensor = numeric::Tensor<Scalar>;
