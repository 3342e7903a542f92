//! Frequency-enhanced cross-modal variational autoencoders for zero-shot
//! skeleton action recognition.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: dense matrices, small tanh perceptrons with hand-written
//!   backprop, Adam, seeded RNG streams and a finite-difference gradient checker.
//! - [`frequency`]: orthonormal DCT-II / DCT-III over motion trajectories and
//!   the piecewise low/high frequency scaling.
//! - [`semantics`]: ingestion of label / local / global description
//!   embeddings and their fusion into one unit-norm text feature.
//! - [`losses`]: the calibrated cross-alignment loss, four triplet baselines,
//!   the ELBO and the closed-form Gaussian KL, all with analytic gradients.
//! - [`crossvae`]: the skeleton and text VAEs sharing a latent space and the
//!   joint training step.
//! - [`pipeline`]: alignment training, the unseen / seen classifiers, the
//!   seen-unseen gate, ZSL / GZSL evaluation and the on-disk formats.
//! - [`synthbench`]: a seeded generator of skeleton-like sequences and matching
//!   embeddings used as a desk-scale benchmark.
//! - [`cli`]: the command implementations behind the `fsvae` binary.
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod crossvae;
pub mod error;
pub mod frequency;
pub mod losses;
pub mod numkit;
pub mod pipeline;
pub mod semantics;
pub mod synthbench;

pub use error::{Error, Result};

/// Integer identifier of an action class.
pub type ClassId = u32;
