//! The miniature unified diffusion transformer: shared patch-embedding input
//! layer, width-concatenated self-attention under 3D RoPE, dual-branch
//! cross-attention, modality-adaptive AdaLN-Zero, per-modality output heads.

pub mod audit;
pub mod config;
pub mod net;
pub mod rope;

pub use crate::modality::{alignment_of, Alignment, Modality, MODALITY_COUNT};
pub use audit::audit_touched_params;
pub use config::ModelConfig;
pub use net::{
    layout, patchify_raw, sinusoid, unpatchify_raw, AttnCapture, BlockAttn, ModIn, Model, RgbIn,
    LN_EPS,
};
pub use rope::{rope3d, rope_angles, token_positions, RopeTables};
