//! Multi-task training with dynamically balanced task weighting.
//!
//! The crate trains a two-head text model (score regression plus five-way
//! classification) where the blend between the two tasks is produced at every
//! step instead of being fixed up front:
//!
//! - gradient-norm balancing coefficients equalize task gradient magnitudes,
//! - a batch-level imbalance-aware classification loss reweights rare classes
//!   through a learnable pair of scalars (`alpha`, `beta`),
//! - a small two-layer softmax network turns the balanced losses into the
//!   final task weights.
//!
//! Everything runs on a self-contained reverse-mode autodiff engine
//! ([`graph`]) over dense `f64` tensors, with [`nn`] layers (including
//! low-rank adapters), [`optim`] Adam/AdamW with warmup-cosine scheduling,
//! deterministic [`data`] tooling (hashing tokenizer, synthetic corpora), and
//! a [`train`] engine that produces per-step records suitable for exact
//! reproducibility checks.
//!
//! The crate is `no_std`-compatible (with `alloc`): disable default features
//! and enable `libm` to build without the standard library. All randomness
//! comes from an owned, seedable generator ([`rng::Rng`]), so results are
//! reproducible bit for bit across runs and platforms.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dao;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
