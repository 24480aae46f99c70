//! Bias-corrected Adam over the model's named parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Buffer, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second-moment buffers per parameter, in model layout order.
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(model: &Model) -> AdamState {
        let sizes: Vec<usize> = model.named_params().map(|(_, p)| p.numel()).collect();
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update from the gradients currently resting on the parameters.
/// Parameters with no gradient (unreached by backward) are treated as
/// zero-gradient. Clears all gradients afterwards.
pub fn adam_update(model: &mut Model, state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);

    let names: Vec<String> = model.named_params().map(|(n, _)| n.to_string()).collect();
    for (idx, name) in names.iter().enumerate() {
        let param = model.param(name).expect("layout name").clone();
        let grad: Option<Buffer> = param.grad();
        param.clear_grad();
        let n = param.numel();
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        if m.len() != n {
            return Err(Error::invalid(
                "adam state",
                format!("moment buffer for {name} has wrong length"),
            ));
        }

        let mut theta: Vec<f32> = param.data_f32().to_vec();
        let g_buf = grad.as_ref();
        let mut changed = false;
        for i in 0..n {
            let g = match g_buf {
                Some(b) => {
                    let gi = b.get(i);
                    if !gi.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite gradient on {name}[{i}] at adam step {}",
                            state.step
                        )));
                    }
                    gi + hp.weight_decay * theta[i] as f64
                }
                None if hp.weight_decay != 0.0 => hp.weight_decay * theta[i] as f64,
                None => continue,
            };
            let mi = hp.beta1 * m[i] as f64 + (1.0 - hp.beta1) * g;
            let vi = hp.beta2 * v[i] as f64 + (1.0 - hp.beta2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            theta[i] = (theta[i] as f64 - hp.lr * m_hat / (v_hat.sqrt() + hp.eps)) as f32;
            changed = true;
        }
        if changed {
            model.set_param(name, Tensor::from_f32(param.shape(), theta)?)?;
        }
    }
    Ok(())
}
