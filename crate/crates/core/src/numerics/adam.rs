use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Moment buffers, one pair per parameter in the order given to
/// [`AdamState::new`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> AdamState {
        AdamState {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient (frozen, or
/// unreached by the last backward pass) are left untouched.
pub fn adam_step(params: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::contract(format!(
            "optimizer tracks {} parameters, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first[i].len() != p.numel() {
            return Err(Error::contract(format!(
                "optimizer slot {i} holds {} values, parameter has shape {:?}",
                state.first[i].len(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let c2 = 1.0 - (cfg.beta2 as f64).powi(t);
    for (i, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let Some(g) = p.grad() else { continue };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        p.update(|w| {
            for j in 0..w.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] as f64 / c1;
                let vhat = v[j] as f64 / c2;
                w[j] -= (cfg.lr as f64 * mhat / (vhat.sqrt() + cfg.eps as f64)) as f32;
            }
        });
    }
    Ok(())
}

/// L2 norm over every populated gradient.
pub fn global_grad_norm(params: &[Tensor]) -> f32 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .map(|g| g.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt() as f32
}
