//! Scratch diagnostics (ignored).
use uft::eval::seg::labels_from_palette;
use uft::flowmatch::{euler_sample, Conditions, SamplerConfig, TaskMode};
use uft::modality::Modality;
use uft::numerics::rng::Rng;
use uft::toyworld::render_sample;
use uft::toyworld::scene::Difficulty;
use uft::trainer::load_checkpoint;

#[test]
#[ignore]
fn inspect_predictions() {
    let ckpt = std::env::var("UFT_CKPT").unwrap_or("/tmp/pilot/fullrun2/ckpt_final".into());
    let model = load_checkpoint(std::path::Path::new(&ckpt)).unwrap().model;
    let extent = model.config().grid;
    let sample = render_sample(&Rng::seed_from(555), 2, Difficulty::Standard, extent).unwrap();
    println!("scene: {}", serde_json::to_string(&sample.scene).unwrap());
    for modality in [Modality::Segmentation, Modality::Depth] {
        let mut rng = Rng::seed_from(9001);
        let sc = SamplerConfig { steps: 50, cfg_scale: 7.5, task: TaskMode::Estimation };
        let out = euler_sample(&model, &Conditions {
            modality, prompt: "", modality_grid: None,
            rgb_grid: Some(sample.grid(Modality::Rgb)),
        }, &sc, &mut rng).unwrap();
        let pred = out.modality;
        let gt = sample.grid(modality);
        if modality == Modality::Segmentation {
            let lp = labels_from_palette(&pred, 0);
            let lg = labels_from_palette(gt, 0);
            println!("pred labels frame0:");
            for y in 0..extent.1 {
                let row: String = (0..extent.2).map(|x| char::from_digit(lp[y*extent.2+x] as u32, 10).unwrap()).collect();
                let grow: String = (0..extent.2).map(|x| char::from_digit(lg[y*extent.2+x] as u32, 10).unwrap()).collect();
                println!("  {row}   {grow}");
            }
            // raw values at an object pixel
            for o in &sample.scene.objects {
                let (h, w) = (o.p0.0.round() as usize, o.p0.1.round() as usize);
                println!("class {} center raw pred rgb = ({:.2},{:.2},{:.2}) gt = ({:.2},{:.2},{:.2})",
                    o.class_id,
                    pred.get(0,h,w,0), pred.get(0,h,w,1), pred.get(0,h,w,2),
                    gt.get(0,h,w,0), gt.get(0,h,w,1), gt.get(0,h,w,2));
            }
        } else {
            for o in &sample.scene.objects {
                let (h, w) = (o.p0.0.round() as usize, o.p0.1.round() as usize);
                println!("depth class {}: pred {:.3} gt {:.3} | bg pred {:.3} gt {:.3}",
                    o.class_id, pred.get(0,h,w,0), gt.get(0,h,w,0), pred.get(0,0,0,0), gt.get(0,0,0,0));
            }
        }
    }
}

#[test]
#[ignore]
fn velocity_error_by_timestep() {
    use uft::flowmatch::{interpolate, velocity_target};
    use uft::grid::Grid;
    use uft::model::{patchify_raw, ModIn, RgbIn};
    use uft::numerics::{ops, DType};
    let ckpt = std::env::var("UFT_CKPT").unwrap_or("/tmp/pilot/fullrun2/ckpt_final".into());
    let model = load_checkpoint(std::path::Path::new(&ckpt)).unwrap().model;
    let extent = model.config().grid;
    let patch = model.config().patch;
    for modality in [Modality::Depth, Modality::Segmentation] {
        println!("--- {modality:?} (estimation: rgb clean @ t=0) ---");
        for t in [0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98] {
            let mut mse_sum = 0.0;
            let n = 8;
            for i in 0..n {
                let sample = render_sample(&Rng::seed_from(555), i, Difficulty::Standard, extent).unwrap();
                let mut rng = Rng::seed_from(400 + i as u64);
                let m0 = sample.grid(modality);
                let m1 = Grid::noise(extent, 3, DType::F32, &mut rng);
                let m_t = interpolate(m0, &m1, t).unwrap();
                let v_m = patchify_raw(&velocity_target(m0, &m1).unwrap(), patch);
                let c_r = model.text_embed(&sample.caption, false).unwrap();
                let c_m = model.text_embed(modality.prompt(), false).unwrap();
                let (_, vm_hat) = model.forward_tokens(
                    &RgbIn { grid: sample.grid(Modality::Rgb), t: 0.0, text: &c_r },
                    Some(&ModIn { modality, grid: &m_t, t, text: &c_m }),
                    None,
                ).unwrap();
                mse_sum += ops::mse(&vm_hat.unwrap(), &v_m).unwrap().item().unwrap();
            }
            println!("t={t:.2}: vm mse {:.4}", mse_sum / n as f64);
        }
    }
}
