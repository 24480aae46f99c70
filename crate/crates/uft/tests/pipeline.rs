//! End-to-end pipeline tests: determinism, checkpoint resume, sampler
//! consistency, and the command-line surface.

use std::path::Path;
use std::process::Command;

use uft::flowmatch::{euler_sample, Conditions, SamplerConfig, TaskMode};
use uft::grid::Grid;
use uft::modality::Modality;
use uft::model::{Model, ModelConfig};
use uft::numerics::rng::Rng;
use uft::numerics::DType;
use uft::toyworld::scene::Difficulty;
use uft::toyworld::{load_dataset, make_dataset};
use uft::trainer::{run_curriculum, TrainConfig, Trainer};

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_blocks: 1,
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

fn tiny_train_cfg(total_steps: usize, stage1_steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        lr: 1e-3,
        total_steps,
        stage1_steps,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_datasets(dir: &Path) -> (uft::toyworld::LoadedDataset, uft::toyworld::LoadedDataset) {
    let easy_dir = dir.join("easy");
    let std_dir = dir.join("standard");
    make_dataset(&Rng::seed_from(100), 16, Difficulty::Easy, (2, 8, 8), &easy_dir).unwrap();
    make_dataset(&Rng::seed_from(101), 16, Difficulty::Standard, (2, 8, 8), &std_dir).unwrap();
    (load_dataset(&easy_dir).unwrap(), load_dataset(&std_dir).unwrap())
}

#[test]
fn identical_seeds_give_bit_identical_parameter_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let (easy, standard) = tiny_datasets(dir.path());
    let run = || {
        let mut t = Trainer::new(
            &tiny_model_cfg(),
            tiny_train_cfg(100, 40, 5),
            Some(easy.clone()),
            standard.clone(),
        )
        .unwrap();
        let mut snapshots = Vec::new();
        for step in 0..100 {
            t.step_once().unwrap();
            if step % 10 == 9 {
                snapshots.push(t.model.to_flat());
            }
        }
        snapshots
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.bit_eq(y), "parameter trajectories diverged");
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (easy, standard) = tiny_datasets(dir.path());
    let mcfg = tiny_model_cfg();
    let tcfg = tiny_train_cfg(6, 2, 9);

    let mut uninterrupted =
        Trainer::new(&mcfg, tcfg.clone(), Some(easy.clone()), standard.clone()).unwrap();
    for _ in 0..6 {
        uninterrupted.step_once().unwrap();
    }

    let mut first =
        Trainer::new(&mcfg, tcfg.clone(), Some(easy.clone()), standard.clone()).unwrap();
    for _ in 0..4 {
        first.step_once().unwrap();
    }
    let ckpt = dir.path().join("ckpt");
    first.save(&ckpt).unwrap();
    let mut resumed =
        Trainer::resume(&ckpt, &mcfg, tcfg.clone(), Some(easy.clone()), standard.clone()).unwrap();
    assert_eq!(resumed.step, 4);
    for _ in 0..2 {
        resumed.step_once().unwrap();
    }
    assert!(
        resumed.model.to_flat().bit_eq(&uninterrupted.model.to_flat()),
        "resumed run diverged from the uninterrupted one"
    );

    // A different configuration must be rejected by hash.
    let other = tiny_train_cfg(6, 2, 10);
    assert!(Trainer::resume(&ckpt, &mcfg, other, Some(easy), standard).is_err());
}

#[test]
fn curriculum_csv_has_one_row_per_step_and_respects_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let (easy, standard) = tiny_datasets(dir.path());
    let out = dir.path().join("run");
    let outcome = run_curriculum(
        &tiny_model_cfg(),
        tiny_train_cfg(12, 5, 3),
        Some(easy),
        standard,
        &out,
    )
    .unwrap();
    assert_eq!(outcome.records.len(), 12);
    let text = std::fs::read_to_string(&outcome.csv_path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for row in &rows[..5] {
        assert!(
            !row.contains("segmentation") && !row.contains("keypoints"),
            "stage-1 row contains a pixel-unaligned modality: {row}"
        );
    }
    assert!(outcome.stage1_checkpoint.is_some());
    assert!(outcome.final_checkpoint.join("config.json").exists());

    // stage1_steps = 0 degenerates to a pure stage-2 run.
    let dir2 = tempfile::tempdir().unwrap();
    let (_, standard2) = tiny_datasets(dir2.path());
    let outcome2 = run_curriculum(
        &tiny_model_cfg(),
        tiny_train_cfg(3, 0, 3),
        None,
        standard2,
        &dir2.path().join("run"),
    )
    .unwrap();
    assert_eq!(outcome2.records.len(), 3);
    assert!(outcome2.stage1_checkpoint.is_none());
}

#[test]
fn euler_step_doubling_converges_first_order() {
    // On a fixed (randomized) model and fixed initial noise, halving the step
    // size changes the output less and less.
    let cfg = tiny_model_cfg();
    let model = Model::init_all_random(&cfg, DType::F32, &mut Rng::seed_from(77)).unwrap();
    let sample_at = |steps: usize| {
        let mut rng = Rng::seed_from(123);
        let conds = Conditions {
            modality: Modality::Depth,
            prompt: "one object moving left",
            modality_grid: None,
            rgb_grid: None,
        };
        let sc = SamplerConfig { steps, cfg_scale: 1.0, task: TaskMode::Joint };
        euler_sample(&model, &conds, &sc, &mut rng).unwrap().rgb
    };
    let l2 = |a: &Grid, b: &Grid| {
        a.tensor()
            .data_f32()
            .iter()
            .zip(b.tensor().data_f32())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (x25, x50, x100) = (sample_at(25), sample_at(50), sample_at(100));
    let d_coarse = l2(&x25, &x50);
    let d_fine = l2(&x50, &x100);
    assert!(
        d_fine < d_coarse,
        "step doubling did not contract: {d_fine} >= {d_coarse}"
    );
}

#[test]
fn cfg_scale_one_matches_conditional_only_integration() {
    // With s = 1 the CFG path must be bit-identical to integrating the
    // conditional prediction alone, even though the unconditional branch is
    // still evaluated.
    let cfg = tiny_model_cfg();
    let model = Model::init_all_random(&cfg, DType::F32, &mut Rng::seed_from(42)).unwrap();
    let run = |cfg_scale: f64| {
        let mut rng = Rng::seed_from(5);
        let conds = Conditions {
            modality: Modality::Flow,
            prompt: "two objects moving up",
            modality_grid: None,
            rgb_grid: None,
        };
        let sc = SamplerConfig { steps: 8, cfg_scale, task: TaskMode::Joint };
        euler_sample(&model, &conds, &sc, &mut rng).unwrap()
    };
    // Reference: integrate by hand with only the conditional forward.
    let reference = {
        let mut rng = Rng::seed_from(5);
        let c_r = model.text_embed("two objects moving up", false).unwrap();
        let c_m = model.text_embed(Modality::Flow.prompt(), false).unwrap();
        let mut rgb = Grid::noise(cfg.grid, cfg.c_in, DType::F32, &mut rng);
        let mut modality = Grid::noise(cfg.grid, cfg.c_in, DType::F32, &mut rng);
        let steps = 8;
        let dt = 1.0 / steps as f64;
        for i in (1..=steps).rev() {
            let t = i as f64 / steps as f64;
            let (v_r, v_m) = model
                .forward_grids(
                    &uft::model::RgbIn { grid: &rgb, t, text: &c_r },
                    Some(&uft::model::ModIn {
                        modality: Modality::Flow,
                        grid: &modality,
                        t,
                        text: &c_m,
                    }),
                )
                .unwrap();
            rgb = rgb.zip(&v_r, "euler", |x, v| x - dt * v).unwrap();
            modality = modality.zip(&v_m.unwrap(), "euler", |x, v| x - dt * v).unwrap();
        }
        (rgb, modality)
    };
    let out = run(1.0);
    assert!(out.rgb.bit_eq(&reference.0));
    assert!(out.modality.bit_eq(&reference.1));
}

// ── CLI surface ──────────────────────────────────────────────────────

fn uft_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uft"))
}

#[test]
fn cli_gen_data_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let status = uft_bin()
            .args([
                "gen-data",
                "--n",
                "8",
                "--seed",
                "1",
                "--extent",
                "2x8x8",
                "--out",
            ])
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["manifest.json", "samples.bin"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical invocations");
    }
}

#[test]
fn cli_train_sample_estimate_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for (sub, difficulty, n) in [("easy", "easy", "8"), ("standard", "standard", "8")] {
        let status = uft_bin()
            .args(["gen-data", "--n", n, "--difficulty", difficulty, "--seed", "3"])
            .args(["--extent", "2x8x8", "--out"])
            .arg(data.join(sub))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        serde_json::json!({
            "model": {
                "d_model": 16, "n_blocks": 1, "n_heads": 2,
                "patch": [1, 4, 4], "grid": [2, 8, 8],
                "c_in": 3, "text_dim": 16, "vocab": 32, "cfg_drop_prob": 0.1
            },
            "train": { "batch_size": 4, "total_steps": 4, "stage1_steps": 2, "seed": 1 }
        })
        .to_string(),
    )
    .unwrap();
    let run = dir.path().join("run");
    let status = uft_bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = run.join("ckpt_final");

    // Joint sampling writes both streams.
    let sample_dir = dir.path().join("sample");
    let status = uft_bin()
        .args(["sample", "--task", "joint", "--modality", "depth", "--prompt", "one object moving left"])
        .args(["--steps", "4", "--cfg", "7.5", "--seed", "2", "--ckpt"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&sample_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(sample_dir.join("rgb.uft").exists());
    assert!(sample_dir.join("depth.uft").exists());

    // Conditional sampling requires --input; returns the condition unchanged.
    let no_input = uft_bin()
        .args(["sample", "--task", "cond", "--steps", "2", "--ckpt"])
        .arg(&ckpt)
        .arg("--out")
        .arg(dir.path().join("c1"))
        .status()
        .unwrap();
    assert_eq!(no_input.code(), Some(5));

    // Estimate a modality from the sampled RGB.
    let est_dir = dir.path().join("est");
    let status = uft_bin()
        .args(["estimate", "--modality", "depth", "--steps", "4", "--ckpt"])
        .arg(&ckpt)
        .arg("--input")
        .arg(sample_dir.join("rgb.uft"))
        .arg("--out")
        .arg(&est_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(est_dir.join("depth.uft").exists());

    // eval-depth on identical rendered ground truth is exactly (0, 1).
    let gt_scene = uft::toyworld::render_sample(&Rng::seed_from(8), 0, Difficulty::Easy, (2, 8, 8))
        .unwrap();
    let gt_path = dir.path().join("depth_gt.uft");
    uft::numerics::blob::save_tensor(&gt_path, gt_scene.grid(Modality::Depth).tensor()).unwrap();
    let out = uft_bin()
        .args(["eval-depth", "--pred"])
        .arg(&gt_path)
        .arg("--gt")
        .arg(&gt_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["abs_rel"].as_f64().unwrap(), 0.0);
    assert_eq!(v["delta_125"].as_f64().unwrap(), 1.0);

    // export-frames writes one PPM per frame per grid.
    let frames = dir.path().join("frames");
    let status = uft_bin()
        .args(["export-frames", "--grids"])
        .arg(&sample_dir)
        .arg("--out-dir")
        .arg(&frames)
        .status()
        .unwrap();
    assert!(status.success());
    let ppm_count = std::fs::read_dir(&frames).unwrap().count();
    assert_eq!(ppm_count, 4, "2 grids x 2 frames");
    let bytes = std::fs::read(frames.join("rgb_f000.ppm")).unwrap();
    assert!(bytes.starts_with(b"P6\n8 8\n255\n"));
}

#[test]
fn cli_exit_codes_are_documented_and_distinct() {
    // 2: usage.
    let usage = uft_bin().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
    // 3: I/O (missing file).
    let io = uft_bin()
        .args(["eval-depth", "--pred", "/nonexistent.uft", "--gt", "/nonexistent.uft"])
        .output()
        .unwrap();
    assert_eq!(io.status.code(), Some(3));
    // 5: contract violation (zero ground-truth depth).
    let dir = tempfile::tempdir().unwrap();
    let zero = Grid::zeros((1, 2, 2), 3, DType::F32);
    uft::numerics::blob::save_tensor(&dir.path().join("z.uft"), zero.tensor()).unwrap();
    let contract = uft_bin()
        .args(["eval-depth", "--pred"])
        .arg(dir.path().join("z.uft"))
        .arg("--gt")
        .arg(dir.path().join("z.uft"))
        .output()
        .unwrap();
    assert_eq!(contract.status.code(), Some(5));
}
