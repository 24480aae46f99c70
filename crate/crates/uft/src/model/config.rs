//! Model configuration and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Desk-scale stand-in for a large video DiT backbone. Field names are the
/// checkpoint-config JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels per token.
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Patch extents (p_t, p_h, p_w).
    pub patch: (usize, usize, usize),
    /// Frame/pixel extents (T, H, W).
    pub grid: (usize, usize, usize),
    /// Channels per modality grid (3: every toy modality renders to 3 channels).
    pub c_in: usize,
    /// Caption embedding width.
    pub text_dim: usize,
    /// Toy text vocabulary size (hash buckets).
    pub vocab: usize,
    /// Probability of dropping text conditioning during training; required for
    /// classifier-free guidance at inference.
    pub cfg_drop_prob: f64,
    /// Experiment flag: also add the RGB row of the modality table into the
    /// RGB stream's modulation input. Off by default — the modality branch is
    /// the only one that receives a table row.
    #[serde(default)]
    pub add_l_rgb: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            patch: (1, 4, 4),
            grid: (4, 16, 16),
            c_in: 3,
            text_dim: 64,
            vocab: 64,
            cfg_drop_prob: 0.1,
            add_l_rgb: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("T", self.grid.0, self.patch.0),
            ("H", self.grid.1, self.patch.1),
            ("W", self.grid.2, self.patch.2),
        ];
        for (name, g, p) in axes {
            if p == 0 || g == 0 || g % p != 0 {
                return Err(Error::invalid(
                    "model config",
                    format!("grid axis {name} ({g}) not divisible by patch extent ({p})"),
                ));
            }
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(
                "model config",
                format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads),
            ));
        }
        let d_head = self.d_model / self.n_heads;
        if d_head % 2 != 0 {
            return Err(Error::invalid(
                "model config",
                format!("d_head {} must be even for rotary pairs", d_head),
            ));
        }
        let (bt, bh, bw) = self.rope_bands();
        if bt < 2 || bh < 2 || bw < 2 || bt % 2 != 0 || bh % 2 != 0 || bw % 2 != 0 {
            return Err(Error::invalid(
                "model config",
                format!("d_head {d_head} cannot split into three even rotary sub-bands (got {bt},{bh},{bw})"),
            ));
        }
        if self.c_in == 0 || self.vocab == 0 || self.text_dim == 0 || self.n_blocks == 0 {
            return Err(Error::invalid("model config", "zero-sized dimension"));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::invalid(
                "model config",
                format!("cfg_drop_prob {} outside [0,1]", self.cfg_drop_prob),
            ));
        }
        Ok(())
    }

    /// Patch-grid extents (T/p_t, H/p_h, W/p_w).
    pub fn patches(&self) -> (usize, usize, usize) {
        (
            self.grid.0 / self.patch.0,
            self.grid.1 / self.patch.1,
            self.grid.2 / self.patch.2,
        )
    }

    /// Tokens per stream.
    pub fn n_tokens(&self) -> usize {
        let (t, h, w) = self.patches();
        t * h * w
    }

    /// Flattened patch length (p_t · p_h · p_w · c_in).
    pub fn patch_vol(&self) -> usize {
        self.patch.0 * self.patch.1 * self.patch.2 * self.c_in
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Head channels split into three even sub-bands for (t, h, w) rotary
    /// frequencies: equal thirds rounded down to even, remainder to width
    /// (which also carries the concat offset).
    pub fn rope_bands(&self) -> (usize, usize, usize) {
        let d_head = self.d_head();
        let third = 2 * (d_head / 6).max(1);
        let bt = third;
        let bh = third;
        let bw = d_head.saturating_sub(bt + bh);
        (bt, bh, bw)
    }

    /// Width offset applied to modality-token positions: the RGB stream's
    /// patch count along width (streams are concatenated along width).
    pub fn width_offset(&self) -> usize {
        self.patches().2
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.d_model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn indivisible_patch_named_in_error() {
        let cfg = ModelConfig {
            grid: (4, 15, 16),
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains('H'), "{msg}");
    }

    #[test]
    fn rope_bands_even_and_cover_head() {
        for (d_model, n_heads) in [(64, 2), (48, 2), (12, 2), (96, 4), (64, 4)] {
            let cfg = ModelConfig {
                d_model,
                n_heads,
                ..Default::default()
            };
            cfg.validate().unwrap();
            let (bt, bh, bw) = cfg.rope_bands();
            assert_eq!(bt + bh + bw, cfg.d_head());
            assert!(bt % 2 == 0 && bh % 2 == 0 && bw % 2 == 0);
        }
    }

    #[test]
    fn json_keys_are_stable() {
        let cfg = ModelConfig::default();
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        for key in [
            "d_model", "n_blocks", "n_heads", "patch", "grid", "c_in", "text_dim", "vocab",
            "cfg_drop_prob",
        ] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
    }
}
