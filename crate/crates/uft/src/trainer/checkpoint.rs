//! Checkpoint container: a directory with the model config JSON, one "UFT1"
//! blob per named parameter, and optimizer-state blobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{layout, Model, ModelConfig};
use crate::numerics::{blob, DType, Tensor};
use crate::trainer::adam::AdamState;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Hash of the training configuration that produced this checkpoint;
    /// resuming under a different configuration is rejected.
    pub train_hash: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointState {
    step: usize,
    adam_step: u64,
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("serialize config");
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    opt: Option<(&AdamState, usize)>,
    train_hash: Option<String>,
) -> Result<()> {
    let params_dir = dir.join("params");
    std::fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
    let meta = CheckpointMeta {
        model: model.config().clone(),
        train_hash,
    };
    write_json(&dir.join("config.json"), &meta)?;
    for (name, p) in model.named_params() {
        blob::save_tensor(&params_dir.join(format!("{name}.uft")), p)?;
    }
    if let Some((state, step)) = opt {
        let opt_dir = dir.join("opt");
        std::fs::create_dir_all(&opt_dir).map_err(|e| Error::io(&opt_dir, e))?;
        for (idx, (name, _)) in model.named_params().enumerate() {
            let m = Tensor::from_f32(&[state.m[idx].len()], state.m[idx].clone())?;
            let v = Tensor::from_f32(&[state.v[idx].len()], state.v[idx].clone())?;
            blob::save_tensor(&opt_dir.join(format!("{name}.m.uft")), &m)?;
            blob::save_tensor(&opt_dir.join(format!("{name}.v.uft")), &v)?;
        }
        write_json(
            &dir.join("state.json"),
            &CheckpointState {
                step,
                adam_step: state.step,
            },
        )?;
    }
    Ok(())
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub opt: Option<AdamState>,
    pub step: usize,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let meta: CheckpointMeta = read_json(&dir.join("config.json"))?;
    let mut params = Vec::new();
    let mut dtype = DType::F32;
    for (name, _) in layout(&meta.model) {
        let t = blob::load_tensor(&dir.join("params").join(format!("{name}.uft")))?;
        dtype = t.dtype();
        params.push(t.to_param());
    }
    let model = Model::from_params(&meta.model, dtype, params)?;

    let state_path = dir.join("state.json");
    let (opt, step) = if state_path.exists() {
        let st: CheckpointState = read_json(&state_path)?;
        let mut adam = AdamState::new(&model);
        adam.step = st.adam_step;
        for (idx, (name, _)) in model.named_params().enumerate() {
            let m = blob::load_tensor(&dir.join("opt").join(format!("{name}.m.uft")))?;
            let v = blob::load_tensor(&dir.join("opt").join(format!("{name}.v.uft")))?;
            adam.m[idx] = m.data_f32().to_vec();
            adam.v[idx] = v.data_f32().to_vec();
        }
        (Some(adam), st.step)
    } else {
        (None, 0)
    };
    Ok(LoadedCheckpoint {
        model,
        meta,
        opt,
        step,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| Error::invalid("json", e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        why: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = ModelConfig {
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
        };
        let model = Model::init_all_random(&cfg, DType::F32, &mut Rng::seed_from(7)).unwrap();
        let mut state = AdamState::new(&model);
        state.step = 42;
        state.m[0][0] = 0.5;
        state.v[3][1] = 0.25;
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, Some((&state, 17)), Some("abc".into())).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert!(loaded.model.to_flat().bit_eq(&model.to_flat()));
        let lopt = loaded.opt.unwrap();
        assert_eq!(lopt.step, 42);
        assert_eq!(loaded.step, 17);
        assert_eq!(lopt.m[0][0], 0.5);
        assert_eq!(lopt.v[3][1], 0.25);
        assert_eq!(loaded.meta.train_hash.as_deref(), Some("abc"));
    }
}
