//! Analytic multimodal data source: parametric moving-shape scenes rendered
//! into six mutually consistent modality grids with exact ground truth, plus
//! the on-disk dataset format and group tagging for balanced sampling.

pub mod dataset;
pub mod render;
pub mod scene;

pub use dataset::{
    load_dataset, load_manifest, make_dataset, render_sample, DatasetManifest, LoadedDataset,
    ManifestEntry, RenderedSample, GROUP_COUNT,
};
pub use render::{decode_flow, encode_flow, palette_color, render, render_all, PALETTE};
pub use scene::{caption_for, generate_scene, Difficulty, ObjectSpec, SceneSpec, Shape, V_MAX};
