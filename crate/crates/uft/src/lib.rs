//! Unified multi-task, multi-modal flow-matching video transformer, trained
//! and evaluated end to end on an analytic toy world.
//!
//! One transformer backbone conditionally generates, estimates, and jointly
//! generates paired RGB/auxiliary-modality video grids. The crate is split
//! along subsystem lines:
//!
//! - [`numerics`] — differentiable tensor core (ops, tape, rng, gradcheck)
//! - [`grid`] — the rank-4 `[T, H, W, C]` video payload
//! - [`toyworld`] — analytic multimodal data source and dataset container
//! - [`model`] — the unified diffusion transformer
//! - [`flowmatch`] — task routing, interpolants, losses, and the CFG sampler
//! - [`trainer`] — optimizer, curriculum, balanced batches, experiments
//! - [`eval`] — depth/segmentation metrics, attention diagnostics, frame export
//! - [`cli`] — the `uft` command-line surface

pub mod cli;
pub mod error;
pub mod eval;
pub mod flowmatch;
pub mod grid;
pub mod modality;
pub mod model;
pub mod numerics;
pub mod toyworld;
pub mod trainer;

pub use error::{Error, Result};
