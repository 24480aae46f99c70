//! Attention-quadrant diagnostics: how much post-softmax self-attention mass
//! flows within and across the RGB/modality token regions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowmatch::interpolate;
use crate::grid::Grid;
use crate::modality::Modality;
use crate::model::{AttnCapture, ModIn, Model, RgbIn};
use crate::numerics::rng::Rng;
use crate::numerics::DType;
use crate::toyworld::RenderedSample;

/// Mean attention mass per region for one block. Masses are normalized so
/// the four regions sum to 1 (each softmax row sums to 1 and rows are
/// averaged uniformly over heads and tokens).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadrantMass {
    pub rr: f64,
    pub rm: f64,
    pub mr: f64,
    pub mm: f64,
}

impl QuadrantMass {
    pub fn total(&self) -> f64 {
        self.rr + self.rm + self.mr + self.mm
    }

    /// Fraction of attention mass crossing between the streams.
    pub fn cross_ratio(&self) -> f64 {
        self.rm + self.mr
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AttnQuadrantStats {
    pub per_block: Vec<QuadrantMass>,
    /// Mean cross-stream ratio over blocks.
    pub cross_ratio: f64,
}

/// Run one forward pass capturing each block's post-softmax self-attention and
/// aggregate the four region masses. Rejects inputs with no modality stream.
pub fn attn_quadrants(
    model: &Model,
    r_t: &Grid,
    m_t: &Grid,
    modality: Modality,
    t_r: f64,
    t_m: f64,
    caption: &str,
) -> Result<AttnQuadrantStats> {
    let c_r = model.text_embed(caption, false)?;
    let c_m = model.text_embed(modality.prompt(), false)?;
    let mut capture = AttnCapture::default();
    model.forward_tokens(
        &RgbIn { grid: r_t, t: t_r, text: &c_r },
        Some(&ModIn { modality, grid: m_t, t: t_m, text: &c_m }),
        Some(&mut capture),
    )?;
    stats_from_capture(&capture)
}

pub fn stats_from_capture(capture: &AttnCapture) -> Result<AttnQuadrantStats> {
    if capture.blocks.is_empty() {
        return Err(Error::invalid("attn_quadrants", "no captured attention"));
    }
    let mut per_block = Vec::with_capacity(capture.blocks.len());
    for block in &capture.blocks {
        let (n, n_r) = (block.n_tokens, block.n_r);
        if n_r >= n {
            return Err(Error::invalid("attn_quadrants", "no modality stream"));
        }
        let rows_total = (block.heads * n) as f64;
        let mut q = QuadrantMass { rr: 0.0, rm: 0.0, mr: 0.0, mm: 0.0 };
        for h in 0..block.heads {
            let base = h * n * n;
            for row in 0..n {
                for col in 0..n {
                    let p = block.probs[base + row * n + col] as f64 / rows_total;
                    match (row < n_r, col < n_r) {
                        (true, true) => q.rr += p,
                        (true, false) => q.rm += p,
                        (false, true) => q.mr += p,
                        (false, false) => q.mm += p,
                    }
                }
            }
        }
        per_block.push(q);
    }
    let cross_ratio =
        per_block.iter().map(|q| q.cross_ratio()).sum::<f64>() / per_block.len() as f64;
    Ok(AttnQuadrantStats {
        per_block,
        cross_ratio,
    })
}

/// Quadrant stats for a rendered sample: both streams interpolated toward
/// seeded noise at the given timesteps.
pub fn attn_quadrants_for_sample(
    model: &Model,
    sample: &RenderedSample,
    modality: Modality,
    t_r: f64,
    t_m: f64,
    rng: &Rng,
) -> Result<AttnQuadrantStats> {
    let r0 = sample.grid(Modality::Rgb);
    let m0 = sample.grid(modality);
    let r1 = Grid::noise(r0.extent(), r0.channels(), DType::F32, &mut rng.derive(0));
    let m1 = Grid::noise(m0.extent(), m0.channels(), DType::F32, &mut rng.derive(1));
    let r_t = interpolate(r0, &r1, t_r)?;
    let m_t = interpolate(m0, &m1, t_m)?;
    attn_quadrants(model, &r_t, &m_t, modality, t_r, t_m, &sample.caption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::toyworld::render_sample;
    use crate::toyworld::scene::Difficulty;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 24,
            n_blocks: 2,
            n_heads: 2,
            patch: (1, 4, 4),
            grid: (2, 8, 8),
            c_in: 3,
            text_dim: 16,
            vocab: 32,
            cfg_drop_prob: 0.1,
            add_l_rgb: false,
        }
    }

    #[test]
    fn masses_sum_to_one_per_block() {
        let cfg = cfg();
        let mut rng = Rng::seed_from(1);
        let model = Model::init(&cfg, DType::F32, &mut rng).unwrap();
        let sample = render_sample(&Rng::seed_from(2), 0, Difficulty::Standard, cfg.grid).unwrap();
        let stats =
            attn_quadrants_for_sample(&model, &sample, Modality::Depth, 0.5, 0.5, &rng.derive(9))
                .unwrap();
        assert_eq!(stats.per_block.len(), cfg.n_blocks);
        for q in &stats.per_block {
            assert!((q.total() - 1.0).abs() < 1e-5, "total {}", q.total());
            // Row families each sum to their share of rows (both streams have
            // the same token count here).
            assert!((q.rr + q.rm - 0.5).abs() < 1e-5);
            assert!((q.mr + q.mm - 0.5).abs() < 1e-5);
        }
        assert!(stats.cross_ratio > 0.0 && stats.cross_ratio < 1.0);
    }

    #[test]
    fn rgb_only_capture_is_rejected() {
        let cfg = cfg();
        let mut rng = Rng::seed_from(3);
        let model = Model::init(&cfg, DType::F32, &mut rng).unwrap();
        let sample = render_sample(&Rng::seed_from(4), 0, Difficulty::Easy, cfg.grid).unwrap();
        let c_r = model.text_embed(&sample.caption, false).unwrap();
        let mut capture = AttnCapture::default();
        model
            .forward_tokens(
                &RgbIn { grid: sample.grid(Modality::Rgb), t: 0.5, text: &c_r },
                None,
                Some(&mut capture),
            )
            .unwrap();
        let err = stats_from_capture(&capture).unwrap_err();
        assert!(err.to_string().contains("no modality stream"));
    }
}
