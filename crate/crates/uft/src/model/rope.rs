//! 3D rotary position encoding over (frame, height, width) coordinates.
//!
//! Each head's channels split into three contiguous even sub-bands, one per
//! axis, each with the standard base-10000 geometric frequency schedule.
//! Modality tokens receive a width offset equal to the RGB stream's width
//! patch count, reflecting concatenation along the width dimension.

use std::sync::Arc;

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::numerics::{ops, Tensor};

pub const ROPE_BASE: f64 = 10000.0;

/// Token positions in patch-grid coordinates, raster order: t-major, then h,
/// then w.
pub fn token_positions(cfg: &ModelConfig) -> Vec<[usize; 3]> {
    let (tp, hp, wp) = cfg.patches();
    let mut out = Vec::with_capacity(tp * hp * wp);
    for t in 0..tp {
        for h in 0..hp {
            for w in 0..wp {
                out.push([t, h, w]);
            }
        }
    }
    out
}

/// Per-(token, pair) rotation angles for the given positions. Pair layout:
/// the first bt/2 pairs rotate by the t coordinate, the next bh/2 by h, the
/// last bw/2 by w (+ `width_offset`).
pub fn rope_angles(
    positions: &[[usize; 3]],
    bands: (usize, usize, usize),
    width_offset: usize,
) -> Vec<f64> {
    let (bt, bh, bw) = bands;
    let pairs = (bt + bh + bw) / 2;
    let mut out = Vec::with_capacity(positions.len() * pairs);
    for pos in positions {
        for (band, coord) in [
            (bt, pos[0] as f64),
            (bh, pos[1] as f64),
            (bw, pos[2] as f64 + width_offset as f64),
        ] {
            let half = band / 2;
            for j in 0..half {
                let freq = ROPE_BASE.powf(-(j as f64) / half as f64);
                out.push(coord * freq);
            }
        }
    }
    out
}

/// Precomputed angle tables for one model configuration.
#[derive(Clone, Debug)]
pub struct RopeTables {
    /// RGB stream tokens (width offset 0).
    pub rgb: Arc<Vec<f64>>,
    /// Modality stream tokens (width offset = RGB width patch count).
    pub modality: Arc<Vec<f64>>,
    /// Both streams concatenated (RGB then modality), for joint self-attention.
    pub both: Arc<Vec<f64>>,
}

impl RopeTables {
    pub fn new(cfg: &ModelConfig) -> RopeTables {
        let positions = token_positions(cfg);
        let bands = cfg.rope_bands();
        let rgb = rope_angles(&positions, bands, 0);
        let modality = rope_angles(&positions, bands, cfg.width_offset());
        let mut both = rgb.clone();
        both.extend_from_slice(&modality);
        RopeTables {
            rgb: Arc::new(rgb),
            modality: Arc::new(modality),
            both: Arc::new(both),
        }
    }
}

/// Rotate `q_or_k` ([n, heads, d_head]) by the 3D rotary schedule at the
/// given positions. Public entry point mirroring the per-op contract; the
/// model's forward path uses the precomputed [`RopeTables`].
pub fn rope3d(
    q_or_k: &Tensor,
    positions: &[[usize; 3]],
    bands: (usize, usize, usize),
    width_offset: usize,
) -> Result<Tensor> {
    let angles = rope_angles(positions, bands, width_offset);
    ops::rotary_rotate_pairs(q_or_k, Arc::new(angles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn random_qk(rng: &mut Rng, n: usize, heads: usize, d_head: usize) -> Tensor {
        let data: Vec<f32> = (0..n * heads * d_head).map(|_| rng.normal_f32()).collect();
        Tensor::from_f32(&[n, heads, d_head], data).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data_f32()
            .iter()
            .zip(b.data_f32())
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum()
    }

    #[test]
    fn zero_positions_are_identity() {
        let mut rng = Rng::seed_from(1);
        let q = random_qk(&mut rng, 4, 2, 12);
        let rotated = rope3d(&q, &[[0, 0, 0]; 4], (4, 4, 4), 0).unwrap();
        assert!(rotated.bit_eq(&q));
    }

    #[test]
    fn relative_position_property() {
        // dot(rope(q,p1), rope(k,p2)) is invariant under a common shift of all
        // three axes.
        let mut rng = Rng::seed_from(2);
        let bands = (4, 4, 4);
        for _ in 0..20 {
            let q = random_qk(&mut rng, 1, 2, 12);
            let k = random_qk(&mut rng, 1, 2, 12);
            let p1 = [rng.below(6), rng.below(6), rng.below(6)];
            let p2 = [rng.below(6), rng.below(6), rng.below(6)];
            let delta = [rng.below(5), rng.below(5), rng.below(5)];
            let base = dot(
                &rope3d(&q, &[p1], bands, 0).unwrap(),
                &rope3d(&k, &[p2], bands, 0).unwrap(),
            );
            let shifted = dot(
                &rope3d(&q, &[[p1[0] + delta[0], p1[1] + delta[1], p1[2] + delta[2]]], bands, 0)
                    .unwrap(),
                &rope3d(&k, &[[p2[0] + delta[0], p2[1] + delta[1], p2[2] + delta[2]]], bands, 0)
                    .unwrap(),
            );
            assert!((base - shifted).abs() < 1e-5, "{base} vs {shifted}");
        }
    }

    #[test]
    fn width_offset_distinguishes_co_located_tokens() {
        // An RGB token and a modality token at the same (t,h,w) must produce
        // different rotated keys, so their attention logits differ.
        let mut rng = Rng::seed_from(3);
        let q = random_qk(&mut rng, 1, 1, 12);
        let k = random_qk(&mut rng, 1, 1, 12);
        let pos = [[1, 2, 3]];
        let bands = (4, 4, 4);
        let rq = rope3d(&q, &pos, bands, 0).unwrap();
        let k_rgb = rope3d(&k, &pos, bands, 0).unwrap();
        let k_mod = rope3d(&k, &pos, bands, 4).unwrap();
        let d_same = dot(&rq, &k_rgb);
        let d_off = dot(&rq, &k_mod);
        assert!((d_same - d_off).abs() > 0.0);
    }

    #[test]
    fn pair_norms_preserved() {
        let mut rng = Rng::seed_from(4);
        let q = random_qk(&mut rng, 3, 2, 12);
        let rotated = rope3d(&q, &[[5, 9, 2], [0, 4, 7], [3, 3, 3]], (4, 4, 4), 6).unwrap();
        let x = q.data_f32();
        let y = rotated.data_f32();
        for p in 0..x.len() / 2 {
            let n0 = (x[2 * p].powi(2) + x[2 * p + 1].powi(2)).sqrt();
            let n1 = (y[2 * p].powi(2) + y[2 * p + 1].powi(2)).sqrt();
            assert!((n0 - n1).abs() < 1e-6);
        }
    }
}
