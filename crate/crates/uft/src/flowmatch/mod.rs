//! The unified training objective and sampler: task routing, per-stream
//! noise assignment, linear interpolants, velocity targets, the three mode
//! losses, and the classifier-free-guidance Euler ODE sampler.
//!
//! Convention: t = 0 is clean data, t = 1 is pure noise. The interpolant is
//! x_t = (1−t)·x0 + t·x1 with constant velocity v = x1 − x0, and sampling
//! integrates dx/dt = v from t = 1 down to t = 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::modality::Modality;
use crate::model::{ModIn, Model, RgbIn};
use crate::numerics::rng::Rng;
use crate::numerics::{ops, Tensor};

// ── Task routing ─────────────────────────────────────────────────────

/// The three training paradigms; every sample carries exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Generate RGB from a clean auxiliary modality (+ text).
    Conditional,
    /// Estimate the auxiliary modality from clean RGB.
    Estimation,
    /// Generate both streams from noise (+ text).
    Joint,
}

impl TaskMode {
    pub const ALL: [TaskMode; 3] = [TaskMode::Conditional, TaskMode::Estimation, TaskMode::Joint];

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::Conditional => "cond",
            TaskMode::Estimation => "est",
            TaskMode::Joint => "joint",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub p_cond: f64,
    pub p_est: f64,
    pub p_joint: f64,
    /// Ablation escape hatch: allow probabilities that break the
    /// difficulty ordering p_cond < p_est < p_joint.
    #[serde(default)]
    pub allow_unordered: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        // The ordering is specified; the values are ours.
        RoutingConfig {
            p_cond: 0.2,
            p_est: 0.3,
            p_joint: 0.5,
            allow_unordered: false,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_cond, self.p_est, self.p_joint];
        if ps.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid("routing", "negative or non-finite probability"));
        }
        let sum: f64 = ps.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "routing",
                format!("probabilities sum to {sum}, expected 1"),
            ));
        }
        if !self.allow_unordered && !(self.p_cond < self.p_est && self.p_est < self.p_joint) {
            return Err(Error::invalid(
                "routing",
                format!(
                    "expected p_cond < p_est < p_joint, got ({}, {}, {}); set allow_unordered for ablations",
                    self.p_cond, self.p_est, self.p_joint
                ),
            ));
        }
        Ok(())
    }
}

/// Categorical draw over the three modes. Consumes exactly one uniform
/// variate.
pub fn sample_task(rng: &mut Rng, routing: &RoutingConfig) -> TaskMode {
    let u = rng.uniform();
    if u < routing.p_cond {
        TaskMode::Conditional
    } else if u < routing.p_cond + routing.p_est {
        TaskMode::Estimation
    } else {
        TaskMode::Joint
    }
}

/// Uniform timestep on [0, 1].
pub fn sample_timestep(rng: &mut Rng) -> f64 {
    rng.uniform()
}

/// Per-stream timesteps induced by a task mode. The clean stream is pinned
/// to t = 0; noised streams draw from the timestep sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseAssignment {
    pub t_r: f64,
    pub t_m: f64,
}

pub fn assign_noise(mode: TaskMode, rng: &mut Rng) -> NoiseAssignment {
    match mode {
        TaskMode::Conditional => NoiseAssignment {
            t_r: sample_timestep(rng),
            t_m: 0.0,
        },
        TaskMode::Estimation => NoiseAssignment {
            t_r: 0.0,
            t_m: sample_timestep(rng),
        },
        TaskMode::Joint => NoiseAssignment {
            t_r: sample_timestep(rng),
            t_m: sample_timestep(rng),
        },
    }
}

// ── Interpolants and targets ─────────────────────────────────────────

/// x_t = (1−t)·x0 + t·x1, elementwise. Exact at the endpoints.
pub fn interpolate(x0: &Grid, x1: &Grid, t: f64) -> Result<Grid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("interpolate", format!("t = {t} outside [0,1]")));
    }
    let (a, b) = (1.0 - t, t);
    x0.zip(x1, "interpolate", |u, v| a * u + b * v)
}

/// v = x1 − x0: the constant time-derivative of the linear interpolant.
pub fn velocity_target(x0: &Grid, x1: &Grid) -> Result<Grid> {
    x1.zip(x0, "velocity_target", |one, zero| one - zero)
}

// ── Losses ───────────────────────────────────────────────────────────

/// Mode-specific velocity-regression loss on tensors of any matching shape
/// (grids or token layouts — the mean over elements is the same set of
/// values either way).
///
/// Conditional supervises only the RGB stream; Estimation only the modality
/// stream; Joint averages the two per-stream means with equal weight.
pub fn compute_loss_tokens(
    mode: TaskMode,
    v_r_hat: &Tensor,
    v_m_hat: Option<&Tensor>,
    v_r: &Tensor,
    v_m: Option<&Tensor>,
) -> Result<Tensor> {
    let need_m = mode != TaskMode::Conditional;
    if need_m && (v_m_hat.is_none() || v_m.is_none()) {
        return Err(Error::invalid(
            "loss",
            format!("{:?} mode requires the modality stream", mode),
        ));
    }
    match mode {
        TaskMode::Conditional => ops::mse(v_r_hat, v_r),
        TaskMode::Estimation => ops::mse(v_m_hat.unwrap(), v_m.unwrap()),
        TaskMode::Joint => {
            let lr = ops::mse(v_r_hat, v_r)?;
            let lm = ops::mse(v_m_hat.unwrap(), v_m.unwrap())?;
            ops::scalar_mul(&ops::add(&lr, &lm)?, 0.5)
        }
    }
}

/// Grid-space wrapper for [`compute_loss_tokens`].
pub fn compute_loss(
    mode: TaskMode,
    v_r_hat: &Grid,
    v_m_hat: Option<&Grid>,
    v_r: &Grid,
    v_m: Option<&Grid>,
) -> Result<Tensor> {
    compute_loss_tokens(
        mode,
        v_r_hat.tensor(),
        v_m_hat.map(|g| g.tensor()),
        v_r.tensor(),
        v_m.map(|g| g.tensor()),
    )
}

// ── Classifier-free guidance ─────────────────────────────────────────

/// v_uncond + s·(v_cond − v_uncond). The s = 1 path returns the conditional
/// prediction bit-exactly (float rearrangement would otherwise break the
/// degenerate-case contract).
pub fn cfg_combine(v_uncond: &Grid, v_cond: &Grid, s: f64) -> Result<Grid> {
    if !v_uncond.same_shape(v_cond) {
        return Err(Error::ShapeMismatch {
            op: "cfg_combine",
            lhs: v_uncond.tensor().shape().to_vec(),
            rhs: v_cond.tensor().shape().to_vec(),
        });
    }
    if s == 1.0 {
        return Ok(v_cond.clone());
    }
    v_uncond.zip(v_cond, "cfg_combine", |u, c| u + s * (c - u))
}

// ── Euler ODE sampler ────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Sampling steps (uniform substeps of the flow ODE).
    pub steps: usize,
    /// Classifier-free guidance scale.
    pub cfg_scale: f64,
    /// Inference pattern.
    pub task: TaskMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            cfg_scale: 7.5,
            task: TaskMode::Joint,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler", "steps must be >= 1"));
        }
        if self.cfg_scale < 0.0 || !self.cfg_scale.is_finite() {
            return Err(Error::invalid("sampler", "cfg_scale must be >= 0"));
        }
        Ok(())
    }
}

/// Inputs for one sampling run. Conditional requires `modality_grid`;
/// Estimation requires `rgb_grid`; Joint requires only the prompt.
pub struct Conditions<'a> {
    pub modality: Modality,
    pub prompt: &'a str,
    pub modality_grid: Option<&'a Grid>,
    pub rgb_grid: Option<&'a Grid>,
}

pub struct SampleOutput {
    pub rgb: Grid,
    pub modality: Grid,
}

/// Integrate the flow ODE from t = 1 (a pure Gaussian draw) to t = 0 over
/// `steps` uniform substeps: x ← x − Δt·v̂, where v̂ combines the
/// null-text and text-conditioned predictions under CFG. The clean
/// conditioning stream (if any) is held fixed at its data value with its
/// timestep pinned to 0 for every call; its predicted velocity is discarded
/// and the grid is returned unchanged.
pub fn euler_sample(
    model: &Model,
    conditions: &Conditions,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let mcfg = model.config();
    let extent = mcfg.grid;
    let channels = mcfg.c_in;
    let dtype = model.dtype();

    let missing = |what: &str| {
        Error::invalid(
            "sampler",
            format!("{:?} sampling requires {what}", cfg.task),
        )
    };
    match cfg.task {
        TaskMode::Conditional if conditions.modality_grid.is_none() => {
            return Err(missing("a conditioning modality grid"))
        }
        TaskMode::Estimation if conditions.rgb_grid.is_none() => {
            return Err(missing("a conditioning rgb grid"))
        }
        _ => {}
    }

    let c_r = model.text_embed(conditions.prompt, false)?;
    let c_m = model.text_embed(conditions.modality.prompt(), false)?;
    let null = model.text_embed("", true)?;

    let mut rgb = match cfg.task {
        TaskMode::Estimation => conditions.rgb_grid.unwrap().clone(),
        _ => Grid::noise(extent, channels, dtype, rng),
    };
    let mut modality = match cfg.task {
        TaskMode::Conditional => conditions.modality_grid.unwrap().clone(),
        _ => Grid::noise(extent, channels, dtype, rng),
    };

    let dt = 1.0 / cfg.steps as f64;
    for i in (1..=cfg.steps).rev() {
        let t = i as f64 / cfg.steps as f64;
        let (t_r, t_m) = match cfg.task {
            TaskMode::Conditional => (t, 0.0),
            TaskMode::Estimation => (0.0, t),
            TaskMode::Joint => (t, t),
        };
        let run = |text_r: &Tensor, text_m: &Tensor| -> Result<(Grid, Grid)> {
            let (v_r, v_m) = model.forward_grids(
                &RgbIn { grid: &rgb, t: t_r, text: text_r },
                Some(&ModIn {
                    modality: conditions.modality,
                    grid: &modality,
                    t: t_m,
                    text: text_m,
                }),
            )?;
            Ok((v_r, v_m.expect("modality stream present")))
        };
        let (vu_r, vu_m) = run(&null, &null)?;
        let (vc_r, vc_m) = run(&c_r, &c_m)?;

        if cfg.task != TaskMode::Estimation {
            let v = cfg_combine(&vu_r, &vc_r, cfg.cfg_scale)?;
            rgb = rgb.zip(&v, "euler_step", |x, vi| x - dt * vi)?;
            check_finite(&rgb, "rgb", i)?;
        }
        if cfg.task != TaskMode::Conditional {
            let v = cfg_combine(&vu_m, &vc_m, cfg.cfg_scale)?;
            modality = modality.zip(&v, "euler_step", |x, vi| x - dt * vi)?;
            check_finite(&modality, "modality", i)?;
        }
    }

    Ok(SampleOutput { rgb, modality })
}

/// Text-to-RGB sampling with no modality stream in the forward pass (the
/// RGB-only baseline's inference pattern).
pub fn euler_sample_rgb_only(
    model: &Model,
    prompt: &str,
    steps: usize,
    cfg_scale: f64,
    rng: &mut Rng,
) -> Result<Grid> {
    SamplerConfig { steps, cfg_scale, task: TaskMode::Joint }.validate()?;
    let mcfg = model.config();
    let c_r = model.text_embed(prompt, false)?;
    let null = model.text_embed("", true)?;
    let mut rgb = Grid::noise(mcfg.grid, mcfg.c_in, model.dtype(), rng);
    let dt = 1.0 / steps as f64;
    for i in (1..=steps).rev() {
        let t = i as f64 / steps as f64;
        let (vu, _) = model.forward_grids(&RgbIn { grid: &rgb, t, text: &null }, None)?;
        let (vc, _) = model.forward_grids(&RgbIn { grid: &rgb, t, text: &c_r }, None)?;
        let v = cfg_combine(&vu, &vc, cfg_scale)?;
        rgb = rgb.zip(&v, "euler_step", |x, vi| x - dt * vi)?;
        check_finite(&rgb, "rgb", i)?;
    }
    Ok(rgb)
}

fn check_finite(g: &Grid, stream: &str, step: usize) -> Result<()> {
    if !g.tensor().buffer().all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite {stream} state at sampler step {step}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::DType;

    fn grid_of(vals: &[f32], extent: (usize, usize, usize)) -> Grid {
        Grid::from_f32(extent, 1, vals.to_vec()).unwrap()
    }

    fn sampler_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 12,
            n_blocks: 1,
            n_heads: 2,
            patch: (1, 4, 4),
            grid: (1, 4, 4),
            c_in: 3,
            text_dim: 8,
            vocab: 16,
            cfg_drop_prob: 0.1,
            add_l_rgb: false,
        }
    }

    #[test]
    fn routing_validation() {
        RoutingConfig::default().validate().unwrap();
        assert!(RoutingConfig { p_cond: 0.5, p_est: 0.3, p_joint: 0.2, allow_unordered: false }
            .validate()
            .is_err());
        RoutingConfig { p_cond: 0.5, p_est: 0.3, p_joint: 0.2, allow_unordered: true }
            .validate()
            .unwrap();
        assert!(RoutingConfig { p_cond: 0.5, p_est: 0.5, p_joint: 0.5, allow_unordered: true }
            .validate()
            .is_err());
    }

    #[test]
    fn degenerate_routing_always_conditional() {
        let routing = RoutingConfig { p_cond: 1.0, p_est: 0.0, p_joint: 0.0, allow_unordered: true };
        let mut rng = Rng::seed_from(1);
        for _ in 0..100 {
            assert_eq!(sample_task(&mut rng, &routing), TaskMode::Conditional);
        }
    }

    #[test]
    fn routing_frequencies_match_monte_carlo() {
        let routing = RoutingConfig::default();
        let mut rng = Rng::seed_from(2);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[match sample_task(&mut rng, &routing) {
                TaskMode::Conditional => 0,
                TaskMode::Estimation => 1,
                TaskMode::Joint => 2,
            }] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let f = *c as f64 / n as f64;
            assert!((f - p).abs() < 0.01, "freq {f} vs p {p}");
        }
    }

    #[test]
    fn timestep_sampler_uniform() {
        let mut rng = Rng::seed_from(3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_timestep(&mut rng);
            assert!((0.0..=1.0).contains(&t));
            sum += t;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn noise_assignment_pins_clean_streams() {
        let mut rng = Rng::seed_from(4);
        for _ in 0..1000 {
            assert_eq!(assign_noise(TaskMode::Conditional, &mut rng).t_m, 0.0);
            assert_eq!(assign_noise(TaskMode::Estimation, &mut rng).t_r, 0.0);
        }
    }

    #[test]
    fn joint_timesteps_are_independent() {
        let mut rng = Rng::seed_from(5);
        let n = 10_000;
        let (mut sr, mut sm, mut srm, mut sr2, mut sm2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let a = assign_noise(TaskMode::Joint, &mut rng);
            sr += a.t_r;
            sm += a.t_m;
            srm += a.t_r * a.t_m;
            sr2 += a.t_r * a.t_r;
            sm2 += a.t_m * a.t_m;
        }
        let nf = n as f64;
        let cov = srm / nf - (sr / nf) * (sm / nf);
        let var_r = sr2 / nf - (sr / nf).powi(2);
        let var_m = sm2 / nf - (sm / nf).powi(2);
        let corr = cov / (var_r * var_m).sqrt();
        assert!(corr.abs() < 0.03, "corr = {corr}");
    }

    #[test]
    fn interpolation_endpoints_bit_exact() {
        let x0 = grid_of(&[0.25, -1.5, 3.0, 0.1], (1, 2, 2));
        let x1 = grid_of(&[9.75, 2.5, -3.0, 0.7], (1, 2, 2));
        assert!(interpolate(&x0, &x1, 0.0).unwrap().bit_eq(&x0));
        assert!(interpolate(&x0, &x1, 1.0).unwrap().bit_eq(&x1));
        let mid = interpolate(&grid_of(&[0.0; 4], (1, 2, 2)), &grid_of(&[2.0; 4], (1, 2, 2)), 0.5)
            .unwrap();
        assert!(mid.tensor().data_f32().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn velocity_is_time_derivative_of_interpolant() {
        // Finite differences in float64 (float32 rounding would swamp the
        // 1e-6 tolerance).
        let x0 = grid_of(&[0.3, 0.9, -0.4, 0.0], (1, 2, 2)).to_f64();
        let x1 = grid_of(&[1.1, -2.0, 0.5, 0.25], (1, 2, 2)).to_f64();
        let v = velocity_target(&x0, &x1).unwrap();
        let eps = 1e-4;
        for t in [0.2, 0.5, 0.8] {
            let a = interpolate(&x0, &x1, t - eps).unwrap();
            let b = interpolate(&x0, &x1, t + eps).unwrap();
            for i in 0..4 {
                let fd = (b.tensor().data_f64()[i] - a.tensor().data_f64()[i]) / (2.0 * eps);
                assert!((fd - v.tensor().data_f64()[i]).abs() < 1e-6);
            }
        }
        // x0 == x1 -> zero velocity
        let z = velocity_target(&x0, &x0).unwrap();
        assert!(z.tensor().data_f64().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_masks_unsupervised_stream_bit_exact() {
        let shape = [1usize, 8];
        let vr = Tensor::from_f32(&shape, vec![0.5; 8]).unwrap();
        let vr_hat = Tensor::from_f32(&shape, vec![0.5; 8]).unwrap();
        let vm = Tensor::from_f32(&shape, vec![0.0; 8]).unwrap();
        let vm_hat1 = Tensor::from_f32(&shape, vec![100.0; 8]).unwrap();
        let vm_hat2 = Tensor::from_f32(&shape, vec![-3.0; 8]).unwrap();
        let l1 = compute_loss_tokens(TaskMode::Conditional, &vr_hat, Some(&vm_hat1), &vr, Some(&vm))
            .unwrap();
        let l2 = compute_loss_tokens(TaskMode::Conditional, &vr_hat, Some(&vm_hat2), &vr, Some(&vm))
            .unwrap();
        assert_eq!(l1.item().unwrap(), 0.0);
        assert!(l1.bit_eq(&l2), "conditional loss must ignore the modality stream");
    }

    #[test]
    fn joint_unit_offset_gives_unit_loss() {
        let shape = [2usize, 4];
        let vr = Tensor::from_f32(&shape, vec![0.3; 8]).unwrap();
        let vm = Tensor::from_f32(&shape, vec![-0.7; 8]).unwrap();
        let vr_hat = Tensor::from_f32(&shape, vec![1.3; 8]).unwrap();
        let vm_hat = Tensor::from_f32(&shape, vec![0.3; 8]).unwrap();
        let l = compute_loss_tokens(TaskMode::Joint, &vr_hat, Some(&vm_hat), &vr, Some(&vm)).unwrap();
        assert!((l.item().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cfg_degenerate_scales() {
        let u = grid_of(&[0.0, 1.0, 2.0, 3.0], (1, 2, 2));
        let c = grid_of(&[4.0, 5.0, 6.0, 7.0], (1, 2, 2));
        assert!(cfg_combine(&u, &c, 1.0).unwrap().bit_eq(&c));
        assert!(cfg_combine(&u, &c, 0.0).unwrap().bit_eq(&u));
        let g = cfg_combine(&grid_of(&[0.0; 4], (1, 2, 2)), &grid_of(&[1.0; 4], (1, 2, 2)), 7.5)
            .unwrap();
        assert!(g.tensor().data_f32().iter().all(|&v| v == 7.5));
    }

    #[test]
    fn sampler_rejects_missing_conditions_and_zero_steps() {
        let cfg = sampler_cfg();
        let mut rng = Rng::seed_from(6);
        let model = Model::init(&cfg, DType::F32, &mut rng).unwrap();
        let conds = Conditions {
            modality: Modality::Depth,
            prompt: "one object moving left",
            modality_grid: None,
            rgb_grid: None,
        };
        let sc = SamplerConfig { steps: 4, cfg_scale: 1.0, task: TaskMode::Conditional };
        assert!(euler_sample(&model, &conds, &sc, &mut rng).is_err());
        let sc = SamplerConfig { steps: 4, cfg_scale: 1.0, task: TaskMode::Estimation };
        assert!(euler_sample(&model, &conds, &sc, &mut rng).is_err());
        let sc = SamplerConfig { steps: 0, cfg_scale: 1.0, task: TaskMode::Joint };
        assert!(euler_sample(&model, &conds, &sc, &mut rng).is_err());
    }

    #[test]
    fn conditional_sampling_returns_condition_unchanged() {
        let cfg = sampler_cfg();
        let mut rng = Rng::seed_from(7);
        let model = Model::init_all_random(&cfg, DType::F32, &mut rng).unwrap();
        let cond_grid =
            Grid::from_f32((1, 4, 4), 3, (0..48).map(|i| i as f32 / 48.0).collect()).unwrap();
        let conds = Conditions {
            modality: Modality::Depth,
            prompt: "one object moving left",
            modality_grid: Some(&cond_grid),
            rgb_grid: None,
        };
        let sc = SamplerConfig { steps: 3, cfg_scale: 2.0, task: TaskMode::Conditional };
        let out = euler_sample(&model, &conds, &sc, &mut rng).unwrap();
        assert!(out.modality.bit_eq(&cond_grid));
        assert!(out.rgb.tensor().buffer().all_finite());
    }

    #[test]
    fn one_step_sampler_is_noise_minus_velocity() {
        // A freshly initialized model has zero heads, so v̂ ≡ 0 and one Euler
        // step returns the initial noise draw exactly.
        let cfg = sampler_cfg();
        let mut rng = Rng::seed_from(8);
        let model = Model::init(&cfg, DType::F32, &mut rng).unwrap();
        let conds = Conditions {
            modality: Modality::Depth,
            prompt: "",
            modality_grid: None,
            rgb_grid: None,
        };
        let sc = SamplerConfig { steps: 1, cfg_scale: 7.5, task: TaskMode::Joint };
        let mut sample_rng = rng.derive(1);
        let out = euler_sample(&model, &conds, &sc, &mut sample_rng).unwrap();
        let mut replay_rng = rng.derive(1);
        let noise_r = Grid::noise(cfg.grid, cfg.c_in, DType::F32, &mut replay_rng);
        let noise_m = Grid::noise(cfg.grid, cfg.c_in, DType::F32, &mut replay_rng);
        assert!(out.rgb.bit_eq(&noise_r));
        assert!(out.modality.bit_eq(&noise_m));
    }
}
