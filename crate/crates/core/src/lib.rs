//! Momentum modeling for point-by-point tennis event streams.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors, a recording tape with reverse-mode
//!   gradients, finite-difference checks and Adam.
//! * [`data`]: CSV ingestion, cleaning, imputation, normalization, feature
//!   extraction, match sequencing, dataset splits and a synthetic generator.
//! * [`hydra`]: the per-player windowed state-space kernel with implicit
//!   momentum carried across games and sets, plus a loop-based reference.
//! * [`interaction`]: the versus loss and the collaborative-adversarial
//!   attention over modality embeddings.
//! * [`multigran`]: the full model, granularity targets, losses and training.
//! * [`evaluation`]: metrics, Fisher combination, modality ablation and
//!   momentum traces.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod hydra;
pub mod interaction;
pub mod multigran;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
