//! Ranking-based transformation recognition (TransRank) for self-supervised
//! video representation learning, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense tensors, a tape-based reverse-mode differentiator,
//!   SGD with momentum and learning-rate schedules.
//! * [`transforms`]: temporal index sequences (speed, reverse, palindrome,
//!   shuffle) and clip-wise spatial augmentation.
//! * [`synthdata`]: procedurally generated sprite videos with known intrinsic
//!   speed and motion category, plus their on-disk format.
//! * [`model`]: the micro 3D-conv encoder, prediction heads and checkpoints.
//! * [`losses`]: margin ranking and cross-entropy pretext objectives with
//!   exact gradients.
//! * [`train`]: pretraining, linear evaluation and finetuning loops.
//! * [`eval`]: retrieval, speediness generalisation and temporal probes.

pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synthdata;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
pub use numerics::{Scalar, Tensor};
