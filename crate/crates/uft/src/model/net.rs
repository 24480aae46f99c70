//! The miniature unified diffusion transformer.
//!
//! Shared patch-embedding input layer, stacked blocks with width-concatenated
//! self-attention under 3D RoPE, dual-branch cross-attention (RGB tokens
//! attend to content captions, modality tokens to modality-type prompts),
//! modality-adaptive AdaLN-Zero modulation, and per-modality output heads.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::modality::{Modality, MODALITY_COUNT};
use crate::model::config::ModelConfig;
use crate::model::rope::RopeTables;
use crate::numerics::rng::Rng;
use crate::numerics::{ops, Buffer, DType, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Timesteps in [0,1] are scaled by this factor before the base-10000
/// sinusoid, the conventional embedding resolution for diffusion models.
pub const T_EMBED_SCALE: f64 = 1000.0;

// ── Parameter layout ─────────────────────────────────────────────────

/// Named parameter shapes, in a fixed order shared by initialization,
/// checkpoints, and the flattened-parameter view used for gradient checks.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let pv = cfg.patch_vol();
    let td = cfg.text_dim;
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("patch_embed.w".into(), vec![pv, d]),
        ("patch_embed.b".into(), vec![d]),
    ];
    for m in Modality::ALL {
        out.push((format!("head.{}.w", m.name()), vec![d, pv]));
        out.push((format!("head.{}.b", m.name()), vec![pv]));
    }
    out.push(("modality_table".into(), vec![MODALITY_COUNT, d]));
    out.push(("text.table".into(), vec![cfg.vocab, td]));
    out.push(("text.null".into(), vec![1, td]));
    for (n, s) in [
        ("t_embed.w1", vec![d, d]),
        ("t_embed.b1", vec![d]),
        ("t_embed.w2", vec![d, d]),
        ("t_embed.b2", vec![d]),
        ("final_mod.w", vec![d, 2 * d]),
        ("final_mod.b", vec![2 * d]),
    ] {
        out.push((n.into(), s));
    }
    let hidden = cfg.mlp_hidden();
    for i in 0..cfg.n_blocks {
        for (n, s) in [
            ("attn.wq", vec![d, d]),
            ("attn.bq", vec![d]),
            ("attn.wk", vec![d, d]),
            ("attn.bk", vec![d]),
            ("attn.wv", vec![d, d]),
            ("attn.bv", vec![d]),
            ("attn.wo", vec![d, d]),
            ("attn.bo", vec![d]),
            ("cross.wq", vec![d, d]),
            ("cross.bq", vec![d]),
            ("cross.wk", vec![td, d]),
            ("cross.bk", vec![d]),
            ("cross.wv", vec![td, d]),
            ("cross.bv", vec![d]),
            ("cross.wo", vec![d, d]),
            ("cross.bo", vec![d]),
            ("mlp.w1", vec![d, hidden]),
            ("mlp.b1", vec![hidden]),
            ("mlp.w2", vec![hidden, d]),
            ("mlp.b2", vec![d]),
            ("mod.w", vec![d, 9 * d]),
            ("mod.b", vec![9 * d]),
        ] {
            out.push((format!("block.{i}.{n}"), s));
        }
    }
    out
}

/// AdaLN-Zero: modulation projections (and output heads) start at exactly
/// zero so every block begins as the identity. All biases start at zero.
fn zero_initialized(name: &str) -> bool {
    if name.starts_with("head.") || name.starts_with("final_mod.") || name.contains(".mod.") {
        return true;
    }
    name.rsplit('.').next().is_some_and(|last| last.starts_with('b'))
}

const INIT_STD: f64 = 0.02;

// ── Model ────────────────────────────────────────────────────────────

pub struct Model {
    cfg: ModelConfig,
    dtype: DType,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
    rope: RopeTables,
}

/// RGB stream input: the (possibly noised) grid, its timestep, and its
/// caption embedding.
pub struct RgbIn<'a> {
    pub grid: &'a Grid,
    pub t: f64,
    pub text: &'a Tensor,
}

/// Modality stream input.
pub struct ModIn<'a> {
    pub modality: Modality,
    pub grid: &'a Grid,
    pub t: f64,
    pub text: &'a Tensor,
}

/// Post-softmax self-attention captured from one block.
pub struct BlockAttn {
    pub heads: usize,
    /// Tokens per row/column (RGB tokens first).
    pub n_tokens: usize,
    /// RGB token count (row/column split point).
    pub n_r: usize,
    /// [heads, n_tokens, n_tokens], flattened.
    pub probs: Vec<f32>,
}

#[derive(Default)]
pub struct AttnCapture {
    pub blocks: Vec<BlockAttn>,
}

struct Mod9 {
    sa: (Tensor, Tensor, Tensor),
    ca: (Tensor, Tensor, Tensor),
    mlp: (Tensor, Tensor, Tensor),
}

impl Model {
    pub fn init(cfg: &ModelConfig, dtype: DType, rng: &mut Rng) -> Result<Model> {
        cfg.validate()?;
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for (name, shape) in layout(cfg) {
            let n: usize = shape.iter().product();
            let buf = if zero_initialized(&name) {
                Buffer::zeros(dtype, n)
            } else {
                match dtype {
                    DType::F32 => Buffer::F32(
                        (0..n).map(|_| (rng.normal_f64() * INIT_STD) as f32).collect(),
                    ),
                    DType::F64 => {
                        Buffer::F64((0..n).map(|_| rng.normal_f64() * INIT_STD).collect())
                    }
                }
            };
            index.insert(name.clone(), params.len());
            names.push(name);
            params.push(Tensor::param(&shape, buf)?);
        }
        Ok(Model {
            cfg: cfg.clone(),
            dtype,
            names,
            params,
            index,
            rope: RopeTables::new(cfg),
        })
    }

    /// Every parameter random (including the normally zero-initialized
    /// gates/heads). Test-only constructor for probing trained-like behavior
    /// without training.
    pub fn init_all_random(cfg: &ModelConfig, dtype: DType, rng: &mut Rng) -> Result<Model> {
        let mut model = Model::init(cfg, dtype, rng)?;
        for (name, shape) in layout(cfg) {
            let n: usize = shape.iter().product();
            let buf = match dtype {
                DType::F32 => {
                    Buffer::F32((0..n).map(|_| (rng.normal_f64() * INIT_STD) as f32).collect())
                }
                DType::F64 => Buffer::F64((0..n).map(|_| rng.normal_f64() * INIT_STD).collect()),
            };
            let idx = model.index[&name];
            model.params[idx] = Tensor::param(&shape, buf)?;
        }
        Ok(model)
    }

    /// Rebuild from an explicit parameter list in layout order.
    pub fn from_params(cfg: &ModelConfig, dtype: DType, params: Vec<Tensor>) -> Result<Model> {
        cfg.validate()?;
        let expected = layout(cfg);
        if params.len() != expected.len() {
            return Err(Error::invalid(
                "model params",
                format!("expected {} tensors, got {}", expected.len(), params.len()),
            ));
        }
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for ((name, shape), p) in expected.iter().zip(&params) {
            if p.shape() != shape.as_slice() || p.dtype() != dtype {
                return Err(Error::invalid(
                    "model params",
                    format!("parameter {name}: expected {shape:?} {dtype:?}, got {:?} {:?}",
                        p.shape(), p.dtype()),
                ));
            }
            index.insert(name.clone(), names.len());
            names.push(name.clone());
        }
        Ok(Model {
            cfg: cfg.clone(),
            dtype,
            names,
            params,
            index,
            rope: RopeTables::new(cfg),
        })
    }

    /// View the model as slices of one flat parameter tensor; gradients on
    /// the flat leaf then cover every parameter. Used by gradient checks.
    pub fn from_flat(cfg: &ModelConfig, flat: &Tensor) -> Result<Model> {
        let total: usize = layout(cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if flat.rank() != 1 || flat.numel() != total {
            return Err(Error::invalid(
                "model params",
                format!("flat parameter tensor must be [{total}], got {:?}", flat.shape()),
            ));
        }
        let mut params = Vec::new();
        let mut offset = 0usize;
        for (_, shape) in layout(cfg) {
            let n: usize = shape.iter().product();
            let piece = ops::slice(flat, 0, offset, offset + n)?;
            params.push(ops::reshape(&piece, &shape)?);
            offset += n;
        }
        Model::from_params(cfg, flat.dtype(), params)
    }

    /// All parameters flattened into one tensor, in layout order.
    pub fn to_flat(&self) -> Tensor {
        match self.dtype {
            DType::F32 => {
                let mut data = Vec::new();
                for p in &self.params {
                    data.extend_from_slice(p.data_f32());
                }
                Tensor::from_f32(&[data.len()], data).expect("flat")
            }
            DType::F64 => {
                let mut data = Vec::new();
                for p in &self.params {
                    data.extend_from_slice(p.data_f64());
                }
                Tensor::from_f64(&[data.len()], data).expect("flat")
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.params.iter())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    fn p(&self, name: &str) -> &Tensor {
        &self.params[self.index[name]]
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid("model params", format!("unknown parameter {name}")))?;
        let current = &self.params[idx];
        if value.shape() != current.shape() || value.dtype() != current.dtype() {
            return Err(Error::invalid(
                "model params",
                format!("parameter {name}: shape/dtype mismatch"),
            ));
        }
        self.params[idx] = value.to_param();
        Ok(())
    }

    /// Map from parameter tensor uid to name, for parameter-touch audits.
    pub fn uid_names(&self) -> HashMap<u64, String> {
        self.named_params()
            .map(|(n, p)| (p.uid(), n.to_string()))
            .collect()
    }

    // ── Text encoder ─────────────────────────────────────────────────

    /// Whitespace-tokenized prompt hashed into the learnable table. An empty
    /// prompt, or `drop = true`, yields the learned null (classifier-free
    /// unconditional) embedding row.
    pub fn text_embed(&self, prompt: &str, drop: bool) -> Result<Tensor> {
        let tokens: Vec<&str> = prompt.split_whitespace().collect();
        if drop || tokens.is_empty() {
            return Ok(self.p("text.null").clone());
        }
        let indices: Vec<usize> = tokens
            .iter()
            .map(|t| (fnv1a(t.as_bytes()) % self.cfg.vocab as u64) as usize)
            .collect();
        ops::embedding_lookup(self.p("text.table"), &indices)
    }

    // ── Conditioning / modulation ────────────────────────────────────

    fn t_embed(&self, t: f64) -> Result<Tensor> {
        let sin = sinusoid(t, self.cfg.d_model, self.dtype);
        let h = ops::silu(&ops::linear(&sin, self.p("t_embed.w1"), self.p("t_embed.b1"))?)?;
        ops::linear(&h, self.p("t_embed.w2"), self.p("t_embed.b2"))
    }

    /// Stream conditioning vector [1, d]: the timestep embedding, plus the
    /// modality's learnable table row on the modality branch.
    fn stream_cond(&self, t: f64, modality: Option<Modality>) -> Result<Tensor> {
        let temb = self.t_embed(t)?;
        let row = match modality {
            Some(m) => Some(ops::embedding_lookup(self.p("modality_table"), &[m.id()])?),
            None if self.cfg.add_l_rgb => {
                Some(ops::embedding_lookup(self.p("modality_table"), &[Modality::Rgb.id()])?)
            }
            None => None,
        };
        match row {
            Some(r) => ops::add(&r, &temb),
            None => Ok(temb),
        }
    }

    /// The 9 per-sub-layer modulation vectors (scale, shift, gate for
    /// self-attention, cross-attention, MLP) for one block and stream.
    fn modulation(&self, block: usize, cond: &Tensor) -> Result<Mod9> {
        let d = self.cfg.d_model;
        let h = ops::silu(cond)?;
        let out = ops::linear(
            &h,
            self.p(&format!("block.{block}.mod.w")),
            self.p(&format!("block.{block}.mod.b")),
        )?;
        let mut chunks = Vec::with_capacity(9);
        for j in 0..9 {
            chunks.push(ops::slice(&out, 1, j * d, (j + 1) * d)?);
        }
        let mut it = chunks.into_iter();
        let mut next3 = || -> (Tensor, Tensor, Tensor) {
            (it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
        };
        Ok(Mod9 {
            sa: next3(),
            ca: next3(),
            mlp: next3(),
        })
    }

    /// x · (1 + scale) + shift, after a parameter-free layer norm.
    fn modulate_ln(&self, x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        let ln = ops::layer_norm(x, LN_EPS)?;
        let one = Tensor::scalar(self.dtype, 1.0);
        ops::add(&ops::mul(&ln, &ops::add(scale, &one)?)?, shift)
    }

    // ── Attention ────────────────────────────────────────────────────

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let (h, dh) = (self.cfg.n_heads, self.cfg.d_head());
        ops::transpose(&ops::reshape(x, &[n, h, dh])?, &[1, 0, 2])
    }

    fn join_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (h, n, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        ops::reshape(&ops::transpose(x, &[1, 0, 2])?, &[n, h * dh])
    }

    fn self_attention(
        &self,
        block: usize,
        x: &Tensor,
        angles: &Arc<Vec<f64>>,
        n_r: usize,
        capture: &mut Option<&mut AttnCapture>,
    ) -> Result<Tensor> {
        let pre = format!("block.{block}.attn");
        let n = x.shape()[0];
        let (h, dh) = (self.cfg.n_heads, self.cfg.d_head());
        let q = ops::linear(x, self.p(&format!("{pre}.wq")), self.p(&format!("{pre}.bq")))?;
        let k = ops::linear(x, self.p(&format!("{pre}.wk")), self.p(&format!("{pre}.bk")))?;
        let v = ops::linear(x, self.p(&format!("{pre}.wv")), self.p(&format!("{pre}.bv")))?;
        let q = ops::rotary_rotate_pairs(&ops::reshape(&q, &[n, h, dh])?, angles.clone())?;
        let k = ops::rotary_rotate_pairs(&ops::reshape(&k, &[n, h, dh])?, angles.clone())?;
        let q = ops::transpose(&q, &[1, 0, 2])?;
        let k = ops::transpose(&k, &[1, 0, 2])?;
        let v = self.split_heads(&v)?;
        let scores = ops::scalar_mul(
            &ops::matmul(&q, &ops::transpose(&k, &[0, 2, 1])?)?,
            1.0 / (dh as f64).sqrt(),
        )?;
        let probs = ops::softmax(&scores)?;
        if let Some(cap) = capture.as_deref_mut() {
            cap.blocks.push(BlockAttn {
                heads: h,
                n_tokens: n,
                n_r,
                probs: match probs.buffer() {
                    Buffer::F32(v) => v.clone(),
                    Buffer::F64(v) => v.iter().map(|&x| x as f32).collect(),
                },
            });
        }
        let ctx = self.join_heads(&ops::matmul(&probs, &v)?)?;
        ops::linear(&ctx, self.p(&format!("{pre}.wo")), self.p(&format!("{pre}.bo")))
    }

    fn cross_attention(&self, block: usize, x: &Tensor, text: &Tensor) -> Result<Tensor> {
        let pre = format!("block.{block}.cross");
        let dh = self.cfg.d_head();
        let q = self.split_heads(&ops::linear(
            x,
            self.p(&format!("{pre}.wq")),
            self.p(&format!("{pre}.bq")),
        )?)?;
        let k = self.split_heads(&ops::linear(
            text,
            self.p(&format!("{pre}.wk")),
            self.p(&format!("{pre}.bk")),
        )?)?;
        let v = self.split_heads(&ops::linear(
            text,
            self.p(&format!("{pre}.wv")),
            self.p(&format!("{pre}.bv")),
        )?)?;
        let scores = ops::scalar_mul(
            &ops::matmul(&q, &ops::transpose(&k, &[0, 2, 1])?)?,
            1.0 / (dh as f64).sqrt(),
        )?;
        let ctx = self.join_heads(&ops::matmul(&ops::softmax(&scores)?, &v)?)?;
        ops::linear(&ctx, self.p(&format!("{pre}.wo")), self.p(&format!("{pre}.bo")))
    }

    fn mlp(&self, block: usize, x: &Tensor) -> Result<Tensor> {
        let pre = format!("block.{block}.mlp");
        let h = ops::silu(&ops::linear(
            x,
            self.p(&format!("{pre}.w1")),
            self.p(&format!("{pre}.b1")),
        )?)?;
        ops::linear(&h, self.p(&format!("{pre}.w2")), self.p(&format!("{pre}.b2")))
    }

    fn gated_residual(&self, x: &Tensor, gate: &Tensor, y: &Tensor) -> Result<Tensor> {
        ops::add(x, &ops::mul(y, gate)?)
    }

    // ── Forward ──────────────────────────────────────────────────────

    fn check_grid(&self, grid: &Grid, what: &'static str) -> Result<()> {
        let (t, h, w) = self.cfg.grid;
        if grid.extent() != (t, h, w) || grid.channels() != self.cfg.c_in {
            return Err(Error::invalid(
                "model input",
                format!(
                    "{what} grid {:?}x{} does not match config {:?}x{}",
                    grid.extent(),
                    grid.channels(),
                    self.cfg.grid,
                    self.cfg.c_in
                ),
            ));
        }
        if grid.dtype() != self.dtype {
            return Err(Error::DtypeMismatch {
                op: "model input",
                lhs: grid.dtype(),
                rhs: self.dtype,
            });
        }
        Ok(())
    }

    /// Patch-embed one grid through the shared input layer.
    /// Returns [n_tokens, d_model].
    pub fn patch_embed(&self, grid: &Grid) -> Result<Tensor> {
        let raw = patchify_raw(grid, self.cfg.patch);
        ops::linear(&raw, self.p("patch_embed.w"), self.p("patch_embed.b"))
    }

    /// Full velocity-prediction pipeline in token space. Returns
    /// ([n_tokens, patch_vol], Some([n_tokens, patch_vol])) when the modality
    /// stream is present.
    pub fn forward_tokens(
        &self,
        rgb: &RgbIn,
        modality: Option<&ModIn>,
        mut capture: Option<&mut AttnCapture>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_grid(rgb.grid, "rgb")?;
        for s in [rgb.t].iter().chain(modality.map(|m| &m.t)) {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::invalid("model input", format!("timestep {s} outside [0,1]")));
            }
        }
        if let Some(m) = modality {
            self.check_grid(m.grid, "modality")?;
        }

        let n_r = self.cfg.n_tokens();
        let mut tok_r = self.patch_embed(rgb.grid)?;
        let cond_r = self.stream_cond(rgb.t, None)?;
        let mut mod_state = match modality {
            Some(m) => {
                let tok_m = self.patch_embed(m.grid)?;
                let cond_m = self.stream_cond(m.t, Some(m.modality))?;
                Some((tok_m, cond_m, m))
            }
            None => None,
        };

        for b in 0..self.cfg.n_blocks {
            let m9_r = self.modulation(b, &cond_r)?;
            let m9_m = match &mod_state {
                Some((_, cond_m, _)) => Some(self.modulation(b, cond_m)?),
                None => None,
            };

            // (1) width-concatenated self-attention, per-stream modulation.
            let xr = self.modulate_ln(&tok_r, &m9_r.sa.0, &m9_r.sa.1)?;
            let (x_cat, angles) = match (&mod_state, &m9_m) {
                (Some((tok_m, _, _)), Some(m9m)) => {
                    let xm = self.modulate_ln(tok_m, &m9m.sa.0, &m9m.sa.1)?;
                    (ops::concat(&[&xr, &xm], 0)?, &self.rope.both)
                }
                _ => (xr, &self.rope.rgb),
            };
            let attn = self.self_attention(b, &x_cat, angles, n_r, &mut capture)?;
            let attn_r = ops::slice(&attn, 0, 0, n_r)?;
            tok_r = self.gated_residual(&tok_r, &m9_r.sa.2, &attn_r)?;
            if let (Some((tok_m, _, _)), Some(m9m)) = (&mut mod_state, &m9_m) {
                let attn_m = ops::slice(&attn, 0, n_r, n_r + self.cfg.n_tokens())?;
                *tok_m = self.gated_residual(tok_m, &m9m.sa.2, &attn_m)?;
            }

            // (2) dual-branch cross-attention: RGB tokens see only C_r,
            // modality tokens only C_m.
            let xq = self.modulate_ln(&tok_r, &m9_r.ca.0, &m9_r.ca.1)?;
            let ca_r = self.cross_attention(b, &xq, rgb.text)?;
            tok_r = self.gated_residual(&tok_r, &m9_r.ca.2, &ca_r)?;
            if let (Some((tok_m, _, m_in)), Some(m9m)) = (&mut mod_state, &m9_m) {
                let xq = self.modulate_ln(tok_m, &m9m.ca.0, &m9m.ca.1)?;
                let ca_m = self.cross_attention(b, &xq, m_in.text)?;
                *tok_m = self.gated_residual(tok_m, &m9m.ca.2, &ca_m)?;
            }

            // (3) per-stream MLP.
            let xm = self.modulate_ln(&tok_r, &m9_r.mlp.0, &m9_r.mlp.1)?;
            let y = self.mlp(b, &xm)?;
            tok_r = self.gated_residual(&tok_r, &m9_r.mlp.2, &y)?;
            if let (Some((tok_m, _, _)), Some(m9m)) = (&mut mod_state, &m9_m) {
                let xm = self.modulate_ln(tok_m, &m9m.mlp.0, &m9m.mlp.1)?;
                let y = self.mlp(b, &xm)?;
                *tok_m = self.gated_residual(tok_m, &m9m.mlp.2, &y)?;
            }
        }

        let v_r = self.final_head(&tok_r, &cond_r, Modality::Rgb)?;
        let v_m = match &mod_state {
            Some((tok_m, cond_m, m_in)) => {
                Some(self.final_head(tok_m, cond_m, m_in.modality)?)
            }
            None => None,
        };
        Ok((v_r, v_m))
    }

    /// The zero-gate reference pipeline: patch embed, final modulated norm,
    /// head — no blocks. At initialization the full forward must equal this
    /// bit-exactly.
    pub fn forward_tokens_block_free(
        &self,
        grid: &Grid,
        t: f64,
        modality: Option<Modality>,
    ) -> Result<Tensor> {
        self.check_grid(grid, "block-free")?;
        let tok = self.patch_embed(grid)?;
        let cond = self.stream_cond(t, modality)?;
        self.final_head(&tok, &cond, modality.unwrap_or(Modality::Rgb))
    }

    fn final_head(&self, tokens: &Tensor, cond: &Tensor, head: Modality) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let fm = ops::linear(&ops::silu(cond)?, self.p("final_mod.w"), self.p("final_mod.b"))?;
        let scale = ops::slice(&fm, 1, 0, d)?;
        let shift = ops::slice(&fm, 1, d, 2 * d)?;
        let y = self.modulate_ln(tokens, &scale, &shift)?;
        ops::linear(
            &y,
            self.p(&format!("head.{}.w", head.name())),
            self.p(&format!("head.{}.b", head.name())),
        )
    }

    /// Grid-space forward: token outputs folded back into [T,H,W,C] grids.
    pub fn forward_grids(
        &self,
        rgb: &RgbIn,
        modality: Option<&ModIn>,
    ) -> Result<(Grid, Option<Grid>)> {
        let (v_r, v_m) = self.forward_tokens(rgb, modality, None)?;
        let g_r = unpatchify_raw(&v_r, self.cfg.patch, self.cfg.grid, self.cfg.c_in)?;
        let g_m = match v_m {
            Some(t) => Some(unpatchify_raw(&t, self.cfg.patch, self.cfg.grid, self.cfg.c_in)?),
            None => None,
        };
        Ok((g_r, g_m))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Standard base-10000 sinusoid of a scalar timestep over `d` channels
/// (first half sin, second half cos), shaped [1, d].
pub fn sinusoid(t: f64, d: usize, dtype: DType) -> Tensor {
    let half = d / 2;
    let mut data = vec![0.0f64; d];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let angle = t * T_EMBED_SCALE * freq;
        data[i] = angle.sin();
        data[half + i] = angle.cos();
    }
    match dtype {
        DType::F32 => {
            Tensor::from_f32(&[1, d], data.iter().map(|&x| x as f32).collect()).expect("sinusoid")
        }
        DType::F64 => Tensor::from_f64(&[1, d], data).expect("sinusoid"),
    }
}

/// Flatten a grid into per-patch rows [n_tokens, p_t·p_h·p_w·C], raster order
/// t-major then h then w; within a patch (dt, dh, dw, c) row-major. The
/// result is detached data (inputs carry no gradients).
pub fn patchify_raw(grid: &Grid, patch: (usize, usize, usize)) -> Tensor {
    let (t, h, w) = grid.extent();
    let c = grid.channels();
    let (pt, ph, pw) = patch;
    let (tp, hp, wp) = (t / pt, h / ph, w / pw);
    let pv = pt * ph * pw * c;
    let n = tp * hp * wp;

    fn gather<T: Copy>(
        src: &[T],
        (t, h, w, c): (usize, usize, usize, usize),
        (pt, ph, pw): (usize, usize, usize),
        (tp, hp, wp): (usize, usize, usize),
        out: &mut Vec<T>,
    ) {
        let _ = t;
        for ti in 0..tp {
            for hi in 0..hp {
                for wi in 0..wp {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            for dw in 0..pw {
                                let base =
                                    (((ti * pt + dt) * h + (hi * ph + dh)) * w + (wi * pw + dw)) * c;
                                out.extend_from_slice(&src[base..base + c]);
                            }
                        }
                    }
                }
            }
        }
    }

    let buf = match grid.tensor().buffer() {
        Buffer::F32(v) => {
            let mut out = Vec::with_capacity(n * pv);
            gather(v, (t, h, w, c), (pt, ph, pw), (tp, hp, wp), &mut out);
            Buffer::F32(out)
        }
        Buffer::F64(v) => {
            let mut out = Vec::with_capacity(n * pv);
            gather(v, (t, h, w, c), (pt, ph, pw), (tp, hp, wp), &mut out);
            Buffer::F64(out)
        }
    };
    Tensor::from_buffer(&[n, pv], buf).expect("patchify")
}

/// Inverse of [`patchify_raw`] on detached data.
pub fn unpatchify_raw(
    tokens: &Tensor,
    patch: (usize, usize, usize),
    grid_extent: (usize, usize, usize),
    c: usize,
) -> Result<Grid> {
    let (t, h, w) = grid_extent;
    let (pt, ph, pw) = patch;
    let (tp, hp, wp) = (t / pt, h / ph, w / pw);
    let pv = pt * ph * pw * c;
    let n = tp * hp * wp;
    if tokens.shape() != [n, pv] {
        return Err(Error::invalid(
            "unpatchify",
            format!("expected [{n}, {pv}], got {:?}", tokens.shape()),
        ));
    }

    fn scatter<T: Copy + Default>(
        src: &[T],
        (t, h, w, c): (usize, usize, usize, usize),
        (pt, ph, pw): (usize, usize, usize),
        (tp, hp, wp): (usize, usize, usize),
    ) -> Vec<T> {
        let mut out = vec![T::default(); t * h * w * c];
        let mut cursor = 0usize;
        for ti in 0..tp {
            for hi in 0..hp {
                for wi in 0..wp {
                    for dt in 0..pt {
                        for dh in 0..ph {
                            for dw in 0..pw {
                                let base =
                                    (((ti * pt + dt) * h + (hi * ph + dh)) * w + (wi * pw + dw)) * c;
                                out[base..base + c].copy_from_slice(&src[cursor..cursor + c]);
                                cursor += c;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    let buf = match tokens.buffer() {
        Buffer::F32(v) => Buffer::F32(scatter(v, (t, h, w, c), (pt, ph, pw), (tp, hp, wp))),
        Buffer::F64(v) => Buffer::F64(scatter(v, (t, h, w, c), (pt, ph, pw), (tp, hp, wp))),
    };
    Grid::from_tensor(Tensor::from_buffer(&[t, h, w, c], buf)?)
}
