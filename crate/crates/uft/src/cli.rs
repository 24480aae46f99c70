//! The `uft` command-line surface.
//!
//! Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric failure, 5 contract violation.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{attn_quadrants_for_sample, depth_metrics, export_frames, seg_metrics};
use crate::flowmatch::{
    euler_sample, euler_sample_rgb_only, Conditions, SamplerConfig, TaskMode,
};
use crate::grid::Grid;
use crate::modality::Modality;
use crate::model::ModelConfig;
use crate::numerics::{blob, rng::Rng};
use crate::toyworld::scene::Difficulty;
use crate::toyworld::{load_dataset, make_dataset};
use crate::trainer::checkpoint::{load_checkpoint, write_json};
use crate::trainer::convergence::{run_convergence_suite, ConvergenceConfig};
use crate::trainer::train::{run_curriculum, TrainConfig};
use crate::trainer::verify::{gradcheck_model_config, loss_grad_check};

#[derive(Parser)]
#[command(
    name = "uft",
    version,
    about = "Unified multi-task multi-modal flow-matching video model on an analytic toy world",
    after_help = "Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric failure, 5 contract violation."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DifficultyArg {
    Easy,
    Standard,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    /// Text-to-video: RGB only, no auxiliary stream.
    T2v,
    /// Conditional generation: RGB from a clean modality grid (needs --input).
    Cond,
    /// Joint generation of both streams from text.
    Joint,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "standard")]
        difficulty: DifficultyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Grid extent as TxHxW.
        #[arg(long, default_value = "4x16x16")]
        extent: String,
    },
    /// Run the two-stage curriculum training loop.
    Train {
        /// JSON config file with "model" and "train" sections (defaults used
        /// for missing fields).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root containing easy/ and standard/ subdirectories (easy/
        /// only required when stage1_steps > 0).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three-arm convergence comparison experiment.
    Convergence {
        /// JSON ConvergenceConfig (defaults used when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample from a trained checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value = "depth")]
        modality: String,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7.5)]
        cfg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Conditioning modality grid (.uft), required for --task cond.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Estimate a modality from an RGB grid.
    Estimate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        modality: String,
        /// RGB grid (.uft).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 7.5)]
        cfg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Depth metrics between two rank-4 .uft grids; JSON on stdout.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Least-squares scale/shift pre-alignment.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        align: bool,
    },
    /// Segmentation metrics between two rank-4 .uft grids; JSON on stdout.
    EvalSeg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Attention-quadrant statistics of a checkpoint on a dataset sample.
    AttnStats {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value = "depth")]
        modality: String,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
    },
    /// Finite-difference verification of the three mode losses; JSON on stdout.
    Gradcheck {
        /// JSON GradCheckConfig (tiny float64 model by default).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export every frame of every .uft grid in a directory as binary PPM.
    ExportFrames {
        /// A .uft file or a directory containing .uft grids.
        #[arg(long)]
        grids: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct TrainFileConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GradCheckConfig {
    #[serde(default = "gradcheck_model_config")]
    model: ModelConfig,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default)]
    seed: u64,
}

fn default_eps() -> f64 {
    1e-4
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: gradcheck_model_config(),
            eps: default_eps(),
            seed: 0,
        }
    }
}

fn parse_extent(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid("extent", format!("expected TxHxW, got {s:?}")))?;
    if parts.len() != 3 {
        return Err(Error::invalid("extent", format!("expected TxHxW, got {s:?}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => crate::trainer::checkpoint::read_json(p),
        None => Ok(T::default()),
    }
}

fn load_grid(path: &Path) -> Result<Grid> {
    Grid::from_tensor(blob::load_tensor(path)?)
}

fn save_sample_output(out: &Path, grids: &[(&str, &Grid)]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, grid) in grids {
        blob::save_tensor(&out.join(format!("{name}.uft")), grid.tensor())?;
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let line =
        serde_json::to_string(value).map_err(|e| Error::invalid("json", e.to_string()))?;
    println!("{line}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { n, difficulty, seed, out, extent } => {
            let extent = parse_extent(&extent)?;
            let difficulty = match difficulty {
                DifficultyArg::Easy => Difficulty::Easy,
                DifficultyArg::Standard => Difficulty::Standard,
            };
            make_dataset(&Rng::seed_from(seed), n, difficulty, extent, &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
            Ok(())
        }
        Command::Train { config, data, out } => {
            let cfg: TrainFileConfig = read_config(&config)?;
            let standard = load_dataset(&data.join("standard"))?;
            let easy = if cfg.train.stage1_steps > 0 {
                Some(load_dataset(&data.join("easy"))?)
            } else {
                None
            };
            let outcome = run_curriculum(&cfg.model, cfg.train, easy, standard, &out)?;
            eprintln!(
                "trained {} steps; checkpoint at {}",
                outcome.records.len(),
                outcome.final_checkpoint.display()
            );
            Ok(())
        }
        Command::Convergence { config, out } => {
            let cfg: ConvergenceConfig = match &config {
                Some(p) => crate::trainer::checkpoint::read_json(p)?,
                None => ConvergenceConfig::default(),
            };
            let report = run_convergence_suite(&cfg, &out)?;
            write_json(&out.join("report.json"), &report)?;
            print_json(&report)?;
            Ok(())
        }
        Command::Sample { ckpt, task, modality, prompt, steps, cfg, seed, out, input } => {
            let model = load_checkpoint(&ckpt)?.model;
            let modality = Modality::from_name(&modality)?;
            let mut rng = Rng::seed_from(seed);
            match task {
                TaskArg::T2v => {
                    let rgb = euler_sample_rgb_only(&model, &prompt, steps, cfg, &mut rng)?;
                    save_sample_output(&out, &[("rgb", &rgb)])?;
                }
                TaskArg::Cond => {
                    let input = input.ok_or_else(|| {
                        Error::invalid("sample", "--task cond requires --input <modality grid>")
                    })?;
                    let condition = load_grid(&input)?;
                    let sc = SamplerConfig { steps, cfg_scale: cfg, task: TaskMode::Conditional };
                    let out_grids = euler_sample(
                        &model,
                        &Conditions {
                            modality,
                            prompt: &prompt,
                            modality_grid: Some(&condition),
                            rgb_grid: None,
                        },
                        &sc,
                        &mut rng,
                    )?;
                    save_sample_output(
                        &out,
                        &[("rgb", &out_grids.rgb), (modality.name(), &out_grids.modality)],
                    )?;
                }
                TaskArg::Joint => {
                    let sc = SamplerConfig { steps, cfg_scale: cfg, task: TaskMode::Joint };
                    let out_grids = euler_sample(
                        &model,
                        &Conditions {
                            modality,
                            prompt: &prompt,
                            modality_grid: None,
                            rgb_grid: None,
                        },
                        &sc,
                        &mut rng,
                    )?;
                    save_sample_output(
                        &out,
                        &[("rgb", &out_grids.rgb), (modality.name(), &out_grids.modality)],
                    )?;
                }
            }
            eprintln!("wrote sample to {}", out.display());
            Ok(())
        }
        Command::Estimate { ckpt, modality, input, out, steps, cfg, seed } => {
            let model = load_checkpoint(&ckpt)?.model;
            let modality = Modality::from_name(&modality)?;
            let rgb = load_grid(&input)?;
            let mut rng = Rng::seed_from(seed);
            let sc = SamplerConfig { steps, cfg_scale: cfg, task: TaskMode::Estimation };
            let out_grids = euler_sample(
                &model,
                &Conditions {
                    modality,
                    prompt: "",
                    modality_grid: None,
                    rgb_grid: Some(&rgb),
                },
                &sc,
                &mut rng,
            )?;
            save_sample_output(&out, &[(modality.name(), &out_grids.modality)])?;
            eprintln!("wrote estimate to {}", out.display());
            Ok(())
        }
        Command::EvalDepth { pred, gt, align } => {
            let metrics = depth_metrics(&load_grid(&pred)?, &load_grid(&gt)?, align)?;
            print_json(&metrics)
        }
        Command::EvalSeg { pred, gt } => {
            let metrics = seg_metrics(&load_grid(&pred)?, &load_grid(&gt)?)?;
            print_json(&metrics)
        }
        Command::AttnStats { ckpt, data, sample, modality, t } => {
            let model = load_checkpoint(&ckpt)?.model;
            let dataset = load_dataset(&data)?;
            let modality = Modality::from_name(&modality)?;
            let s = dataset.samples.get(sample).ok_or_else(|| {
                Error::invalid("attn-stats", format!("sample {sample} out of range"))
            })?;
            let stats = attn_quadrants_for_sample(&model, s, modality, t, t, &Rng::seed_from(0))?;
            print_json(&stats)
        }
        Command::Gradcheck { config } => {
            let cfg: GradCheckConfig = read_config(&config)?;
            let mut report = serde_json::Map::new();
            let mut worst = 0.0f64;
            for mode in TaskMode::ALL {
                let err = loss_grad_check(&cfg.model, mode, cfg.eps, cfg.seed)?;
                report.insert(mode.name().to_string(), serde_json::json!(err));
                worst = worst.max(err);
            }
            report.insert("max_rel_error".into(), serde_json::json!(worst));
            print_json(&serde_json::Value::Object(report))?;
            if !worst.is_finite() {
                return Err(Error::Numeric("non-finite gradient check".into()));
            }
            Ok(())
        }
        Command::ExportFrames { grids, out_dir } => {
            let mut named: Vec<(String, Grid)> = Vec::new();
            if grids.is_dir() {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(&grids)
                    .map_err(|e| Error::io(&grids, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "uft"))
                    .collect();
                entries.sort();
                for path in entries {
                    let name = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("grid")
                        .to_string();
                    named.push((name, load_grid(&path)?));
                }
                if named.is_empty() {
                    return Err(Error::invalid(
                        "export-frames",
                        format!("no .uft grids in {}", grids.display()),
                    ));
                }
            } else {
                let name = grids
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("grid")
                    .to_string();
                named.push((name, load_grid(&grids)?));
            }
            let files = export_frames(&named, &out_dir)?;
            eprintln!("wrote {} frames to {}", files.len(), out_dir.display());
            Ok(())
        }
    }
}

/// Parse argv, run, and map every failure onto its documented exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
