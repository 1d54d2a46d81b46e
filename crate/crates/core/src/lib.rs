//! Training engine for recognition from very low resolution images.
//!
//! The crate provides, bottom up:
//!
//! - exact hand-written kernels (convolution, fully connected, activations,
//!   dropout) with forward and backward passes over dense f64 tensors;
//! - reconstruction and classification losses, including a Huber loss for
//!   outlier-robust pre-training;
//! - a data degradation pipeline that turns high-resolution grayscale images
//!   into aligned low/high resolution training pairs, plus a binary dataset
//!   format and a synthetic glyph dataset;
//! - a model zoo: a plain classifier, a super-resolution subnet for transfer
//!   pre-training, and partially coupled dual-channel networks that share the
//!   first `k` filters of each convolutional layer between a low-resolution
//!   and a high-resolution channel;
//! - a training harness: SGD with plateau-based learning-rate annealing,
//!   unsupervised pre-training (end-to-end or layer by layer), dual-channel
//!   fine-tuning, top-k evaluation, and a greedy grid search over coupling
//!   ratios.
//!
//! Everything is deterministic: a single `u64` seed fixes initialisation,
//! shuffling, augmentation and dropout through named PRNG sub-streams, and
//! the optional `parallel` feature (rayon) only ever distributes work whose
//! result is bit-identical to the sequential schedule.

pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod models;
pub mod optim;
pub mod reference;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
pub use rng::{RandomState, StreamTag};
pub use tensor::Tensor;
