//! Metrics and diagnostics: depth and segmentation metric suites with oracle
//! tests, attention-quadrant statistics, and frame export.

pub mod attn;
pub mod depth;
pub mod ppm;
pub mod seg;

pub use attn::{attn_quadrants, attn_quadrants_for_sample, AttnQuadrantStats, QuadrantMass};
pub use depth::{depth_metrics, DepthMetrics};
pub use ppm::{export_frames, ppm_bytes};
pub use seg::{labels_from_palette, object_miou, seg_metrics, SegMetrics};
