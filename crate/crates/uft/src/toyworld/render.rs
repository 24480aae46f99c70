//! Analytic rendering of a scene into the six modality grids.
//!
//! Every modality is rendered per pixel, per frame, with strict smallest-z
//! occlusion, into 3 channels with all values in [0, 1] — so the model's
//! input layer can be literally shared across modalities.

use crate::grid::Grid;
use crate::modality::Modality;
use crate::toyworld::scene::{SceneSpec, BACKGROUND_GRAY, V_MAX};

/// Fixed 8-entry palette for rendered id visualizations (segmentation,
/// keypoints); background is black. Minimum pairwise distance 0.5.
pub const PALETTE: [[f32; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
    [1.0, 0.5, 0.0],
];

pub const PALETTE_BACKGROUND: [f32; 3] = [0.0, 0.0, 0.0];

/// Fixed quadrant colors for the parts modality (shared by all objects).
pub const PART_COLORS: [[f32; 3]; 4] = [
    [0.9, 0.15, 0.15],
    [0.15, 0.9, 0.15],
    [0.15, 0.15, 0.9],
    [0.9, 0.9, 0.15],
];

pub fn palette_color(class_id: u8) -> [f32; 3] {
    if class_id == 0 {
        PALETTE_BACKGROUND
    } else {
        PALETTE[(class_id as usize - 1) % PALETTE.len()]
    }
}

/// Velocity component -> [0, 1] channel value.
pub fn encode_flow(v: f64) -> f32 {
    (v / (2.0 * V_MAX) + 0.5) as f32
}

/// Channel value -> velocity component.
pub fn decode_flow(enc: f64) -> f64 {
    (enc - 0.5) * 2.0 * V_MAX
}

pub fn render(scene: &SceneSpec, modality: Modality) -> Grid {
    let (t, h, w) = scene.extent;
    let mut data = vec![0.0f32; t * h * w * 3];

    for f in 0..t {
        for ph in 0..h {
            for pw in 0..w {
                let at = ((f * h + ph) * w + pw) * 3;
                let px = &mut data[at..at + 3];
                match modality {
                    Modality::Rgb => match scene.owner_at(f, ph, pw) {
                        Some(o) => px.copy_from_slice(&o.color),
                        None => px.fill(BACKGROUND_GRAY),
                    },
                    Modality::Depth => {
                        let z = scene
                            .owner_at(f, ph, pw)
                            .map(|o| o.z)
                            .unwrap_or(scene.background_depth);
                        px.fill(z as f32);
                    }
                    Modality::Flow => match scene.owner_at(f, ph, pw) {
                        Some(o) => {
                            px[0] = encode_flow(o.vel.0);
                            px[1] = encode_flow(o.vel.1);
                            px[2] = 0.5;
                        }
                        None => px.fill(0.5),
                    },
                    Modality::Segmentation => match scene.owner_at(f, ph, pw) {
                        Some(o) => px.copy_from_slice(&palette_color(o.class_id)),
                        None => px.copy_from_slice(&PALETTE_BACKGROUND),
                    },
                    Modality::Keypoints => {
                        // 3x3 cross at each object center; nearest z wins.
                        let owner = scene
                            .objects
                            .iter()
                            .filter(|o| {
                                let (ch, cw) = o.center_at(f);
                                let (rch, rcw) = (ch.round() as i64, cw.round() as i64);
                                let (ih, iw) = (ph as i64, pw as i64);
                                (ih == rch && (iw - rcw).abs() <= 1)
                                    || (iw == rcw && (ih - rch).abs() <= 1)
                            })
                            .min_by(|a, b| a.z.partial_cmp(&b.z).unwrap());
                        match owner {
                            Some(o) => px.copy_from_slice(&palette_color(o.class_id)),
                            None => px.copy_from_slice(&PALETTE_BACKGROUND),
                        }
                    }
                    Modality::Parts => match scene.owner_at(f, ph, pw) {
                        Some(o) => {
                            let (ch, cw) = o.center_at(f);
                            let q = usize::from((ph as f64) >= ch) * 2
                                + usize::from((pw as f64) >= cw);
                            px.copy_from_slice(&PART_COLORS[q]);
                        }
                        None => px.copy_from_slice(&PALETTE_BACKGROUND),
                    },
                }
            }
        }
    }
    Grid::from_f32((t, h, w), 3, data).expect("render shape")
}

/// All six modality grids in ModalityId order.
pub fn render_all(scene: &SceneSpec) -> Vec<Grid> {
    Modality::ALL.iter().map(|&m| render(scene, m)).collect()
}
