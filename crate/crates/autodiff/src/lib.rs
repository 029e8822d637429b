//! Dense row-major arrays with reverse-mode differentiation.
//!
//! Computation is recorded on a [`Tape`] during the forward pass and replayed
//! in reverse by [`Tape::backward`]. Trainable weights live in a
//! [`ParamStore`] outside any tape, are bound into a tape per forward pass, and
//! receive their gradients through [`ParamStore::accumulate_grads`]. The
//! [`AdamW`] optimizer then updates them in place.
//!
//! Every numeric routine is generic over [`Real`], so the same model code runs
//! in `f32` for training and in `f64` for gradient checking.

mod array;
mod checkpoint;
mod error;
mod kernels;
mod optim;
mod param;
mod real;
mod tape;

#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;

pub use array::DiffArray;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use error::{Error, Result};
pub use optim::AdamW;
pub use param::{AdamState, Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Segment, Tape, Var, KL_EPS, LAYER_NORM_EPS};
