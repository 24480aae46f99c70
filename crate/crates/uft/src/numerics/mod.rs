//! Minimal differentiable tensor core: n-dimensional arrays, the forward op
//! catalog, reverse-mode differentiation over a per-step tape, a seeded
//! ChaCha8 random source, and finite-difference gradient verification.
//!
//! Training runs in float32; every gradient check runs in float64.

pub mod blob;
pub mod gradcheck;
mod kernels;
pub mod ops;
mod tape;
mod tensor;

pub mod rng;

pub use gradcheck::grad_check;
pub use rng::Rng;
pub use tape::{abort_recording, backward, recording, start_recording, touched_leaf_uids};
pub use tensor::{Buffer, DType, Tensor};
