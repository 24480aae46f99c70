//! Training orchestration: per-sample mode assignment, the unified loss over
//! a balanced batch, the two-stage curriculum, loss CSV, and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmatch::{compute_loss_tokens, interpolate, velocity_target, RoutingConfig, TaskMode};
use crate::grid::Grid;
use crate::modality::Modality;
use crate::model::{patchify_raw, ModIn, Model, ModelConfig, RgbIn};
use crate::numerics::rng::Rng;
use crate::numerics::{self, ops, DType};
use crate::toyworld::{LoadedDataset, GROUP_COUNT};
use crate::trainer::adam::{adam_update, AdamParams, AdamState};
use crate::trainer::batch::{build_batch, group_histogram, BatchItem, CurriculumStage};
use crate::trainer::checkpoint::{config_hash, load_checkpoint, save_checkpoint};

// Derivation tags for the stateless per-step random streams.
const TAG_INIT: u64 = 1;
const TAG_BATCH: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_DROP: u64 = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub stage1_steps: usize,
    /// Auxiliary modalities the run trains on.
    pub modalities_enabled: Vec<Modality>,
    pub routing: RoutingConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            total_steps: 3000,
            stage1_steps: 1000,
            modalities_enabled: Modality::AUX.to_vec(),
            routing: RoutingConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % GROUP_COUNT != 0 {
            return Err(Error::invalid(
                "train config",
                format!("batch_size {} must be a positive multiple of 4", self.batch_size),
            ));
        }
        if self.stage1_steps > self.total_steps {
            return Err(Error::invalid(
                "train config",
                format!(
                    "stage1_steps {} exceeds total_steps {}",
                    self.stage1_steps, self.total_steps
                ),
            ));
        }
        if self.modalities_enabled.is_empty()
            || self.modalities_enabled.contains(&Modality::Rgb)
        {
            return Err(Error::invalid(
                "train config",
                "modalities_enabled must be a non-empty set of auxiliary modalities",
            ));
        }
        self.routing.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One appended record per training step (aggregated over the batch).
/// `modes`/`modalities` list the distinct values drawn in the batch;
/// `rgb_mse`/`mod_mse` average over the samples whose loss supervised that
/// stream (None if no sample did).
#[derive(Clone, Debug)]
pub struct LossRecord {
    pub step: usize,
    pub modes: Vec<TaskMode>,
    pub modalities: Vec<Modality>,
    pub loss: f64,
    pub rgb_mse: Option<f64>,
    pub mod_mse: Option<f64>,
    pub wall_ms: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,mode,modality,loss,rgb_mse,mod_mse,ms";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let modes = self
            .modes
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(";");
        let modalities = self
            .modalities
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(";");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        format!(
            "{},{},{},{:.9},{},{},{:.3}",
            self.step,
            modes,
            modalities,
            self.loss,
            opt(self.rgb_mse),
            opt(self.mod_mse),
            self.wall_ms
        )
    }
}

/// Training state: model, optimizer, datasets, and the step counter. The
/// per-step random streams are derived statelessly from (seed, step), so a
/// resumed run continues bit-exactly.
pub struct Trainer {
    pub model: Model,
    pub opt: AdamState,
    pub cfg: TrainConfig,
    pub step: usize,
    easy: Option<LoadedDataset>,
    standard: LoadedDataset,
    root: Rng,
}

impl Trainer {
    pub fn new(
        mcfg: &ModelConfig,
        cfg: TrainConfig,
        easy: Option<LoadedDataset>,
        standard: LoadedDataset,
    ) -> Result<Trainer> {
        cfg.validate()?;
        mcfg.validate()?;
        if cfg.stage1_steps > 0 && easy.is_none() {
            return Err(Error::invalid(
                "trainer",
                "stage1_steps > 0 requires an easy-difficulty dataset",
            ));
        }
        let root = Rng::seed_from(cfg.seed);
        let model = Model::init(mcfg, DType::F32, &mut root.derive(TAG_INIT))?;
        let opt = AdamState::new(&model);
        Ok(Trainer {
            model,
            opt,
            cfg,
            step: 0,
            easy,
            standard,
            root,
        })
    }

    /// Resume from a checkpoint directory. The stored config hash must match
    /// the provided configuration.
    pub fn resume(
        dir: &Path,
        mcfg: &ModelConfig,
        cfg: TrainConfig,
        easy: Option<LoadedDataset>,
        standard: LoadedDataset,
    ) -> Result<Trainer> {
        let loaded = load_checkpoint(dir)?;
        let expect = config_hash(&(mcfg, &cfg));
        match &loaded.meta.train_hash {
            Some(h) if *h == expect => {}
            other => {
                return Err(Error::invalid(
                    "resume",
                    format!(
                        "checkpoint config hash {:?} does not match the requested configuration {expect}",
                        other
                    ),
                ));
            }
        }
        let opt = loaded
            .opt
            .ok_or_else(|| Error::invalid("resume", "checkpoint has no optimizer state"))?;
        Ok(Trainer {
            model: loaded.model,
            opt,
            root: Rng::seed_from(cfg.seed),
            cfg,
            step: loaded.step,
            easy,
            standard,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let hash = config_hash(&(self.model.config(), &self.cfg));
        save_checkpoint(dir, &self.model, Some((&self.opt, self.step)), Some(hash))
    }

    /// One optimization step: build a balanced batch, accumulate the routed
    /// per-sample losses in fixed sample order, backprop, Adam update.
    pub fn step_once(&mut self) -> Result<LossRecord> {
        let t0 = Instant::now();
        let step = self.step;
        let use_easy = step < self.cfg.stage1_steps;
        let stage = if use_easy {
            CurriculumStage::stage1(&self.cfg.modalities_enabled)?
        } else {
            CurriculumStage::stage2(&self.cfg.modalities_enabled)?
        };
        let dataset = if use_easy {
            self.easy.as_ref().expect("validated at construction")
        } else {
            &self.standard
        };
        let mut batch_rng = self.root.derive(TAG_BATCH).derive(step as u64);
        let batch = build_batch(
            dataset,
            &stage,
            &self.cfg.routing,
            &mut batch_rng,
            self.cfg.batch_size,
        )?;
        let hist = group_histogram(dataset, &batch);
        if hist.iter().any(|&c| c != self.cfg.batch_size / GROUP_COUNT) {
            return Err(Error::invalid(
                "batch",
                format!("unbalanced group histogram {hist:?} at step {step}"),
            ));
        }

        let record = run_train_step(
            &mut self.model,
            &mut self.opt,
            &self.root,
            &self.cfg,
            dataset,
            &batch,
            step,
            t0,
        )?;
        self.step += 1;
        Ok(record)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_train_step(
    model: &mut Model,
    opt: &mut AdamState,
    root: &Rng,
    cfg: &TrainConfig,
    dataset: &LoadedDataset,
    batch: &[BatchItem],
    step: usize,
    t0: Instant,
) -> Result<LossRecord> {
    numerics::start_recording()?;
    let run = || -> Result<(crate::numerics::Tensor, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut total: Option<crate::numerics::Tensor> = None;
        let mut losses = Vec::with_capacity(batch.len());
        let mut rgb_mses = Vec::new();
        let mut mod_mses = Vec::new();
        for (i, item) in batch.iter().enumerate() {
            let sample = &dataset.samples[item.sample_idx];
            let mut drop_rng = root.derive(TAG_DROP).derive(step as u64).derive(i as u64);
            let drop = drop_rng.uniform() < model.config().cfg_drop_prob;
            let c_r = model.text_embed(&sample.caption, drop)?;
            let c_m = model.text_embed(item.modality.prompt(), drop)?;

            let noise_rng = root.derive(TAG_NOISE).derive(step as u64).derive(i as u64);
            let r0 = sample.grid(Modality::Rgb);
            let m0 = sample.grid(item.modality);
            let extent = r0.extent();
            let r1 = Grid::noise(extent, r0.channels(), DType::F32, &mut noise_rng.derive(0));
            let m1 = Grid::noise(extent, m0.channels(), DType::F32, &mut noise_rng.derive(1));
            let r_t = interpolate(r0, &r1, item.noise.t_r)?;
            let m_t = interpolate(m0, &m1, item.noise.t_m)?;
            let patch = model.config().patch;
            let v_r = patchify_raw(&velocity_target(r0, &r1)?, patch);
            let v_m = patchify_raw(&velocity_target(m0, &m1)?, patch);

            let (vr_hat, vm_hat) = model.forward_tokens(
                &RgbIn { grid: &r_t, t: item.noise.t_r, text: &c_r },
                Some(&ModIn {
                    modality: item.modality,
                    grid: &m_t,
                    t: item.noise.t_m,
                    text: &c_m,
                }),
                None,
            )?;
            let vm_hat = vm_hat.expect("modality stream present");

            let loss_i = compute_loss_tokens(item.mode, &vr_hat, Some(&vm_hat), &v_r, Some(&v_m))?;
            let li = loss_i.item()?;
            if !li.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step}, seed {}, sample id {}",
                    cfg.seed, sample.id
                )));
            }
            losses.push(li);
            // Per-stream components for the record (detached bookkeeping).
            if item.mode != TaskMode::Estimation {
                rgb_mses.push(ops::mse(&vr_hat.detached(), &v_r)?.item()?);
            }
            if item.mode != TaskMode::Conditional {
                mod_mses.push(ops::mse(&vm_hat.detached(), &v_m)?.item()?);
            }
            total = Some(match total {
                Some(acc) => ops::add(&acc, &loss_i)?,
                None => loss_i,
            });
        }
        let batch_loss =
            ops::scalar_mul(&total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
        Ok((batch_loss, losses, rgb_mses, mod_mses))
    };
    let (batch_loss, losses, rgb_mses, mod_mses) = match run() {
        Ok(v) => v,
        Err(e) => {
            numerics::abort_recording();
            return Err(e);
        }
    };
    numerics::backward(&batch_loss)?;
    adam_update(model, opt, &cfg.adam())?;

    let modes: Vec<TaskMode> = TaskMode::ALL
        .into_iter()
        .filter(|m| batch.iter().any(|b| b.mode == *m))
        .collect();
    let modalities: Vec<Modality> = Modality::ALL
        .into_iter()
        .filter(|m| batch.iter().any(|b| b.modality == *m))
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(LossRecord {
        step,
        modes,
        modalities,
        loss: losses.iter().sum::<f64>() / losses.len() as f64,
        rgb_mse: mean(&rgb_mses),
        mod_mse: mean(&mod_mses),
        wall_ms: t0.elapsed().as_secs_f64() * 1000.0,
    })
}

pub struct CurriculumOutcome {
    pub final_checkpoint: PathBuf,
    pub stage1_checkpoint: Option<PathBuf>,
    pub csv_path: PathBuf,
    pub records: Vec<LossRecord>,
}

/// Full two-stage run: steps [0, stage1_steps) on easy data restricted to
/// pixel-aligned modalities, then standard data with every enabled modality
/// until total_steps. Checkpoints at the stage boundary and the end; the
/// loss CSV is written incrementally.
pub fn run_curriculum(
    mcfg: &ModelConfig,
    cfg: TrainConfig,
    easy: Option<LoadedDataset>,
    standard: LoadedDataset,
    out_dir: &Path,
) -> Result<CurriculumOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("loss.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = std::io::BufWriter::new(file);
    writeln!(csv, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;

    let mut trainer = Trainer::new(mcfg, cfg.clone(), easy, standard)?;
    let mut records = Vec::with_capacity(cfg.total_steps);
    let mut stage1_checkpoint = None;
    while trainer.step < cfg.total_steps {
        let record = trainer.step_once()?;
        writeln!(csv, "{}", record.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        records.push(record);
        if trainer.step == cfg.stage1_steps && cfg.stage1_steps > 0 {
            let dir = out_dir.join("ckpt_stage1");
            trainer.save(&dir)?;
            stage1_checkpoint = Some(dir);
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let final_dir = out_dir.join("ckpt_final");
    trainer.save(&final_dir)?;
    Ok(CurriculumOutcome {
        final_checkpoint: final_dir,
        stage1_checkpoint,
        csv_path,
        records,
    })
}
