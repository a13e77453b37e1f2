//! AdamW with decoupled weight decay, global-norm clipping and an EMA shadow.

use super::TrainRecipe;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Real, Tensor};

/// First and second moment estimates, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Factor applied to the gradients by clipping (1 when unclipped).
    pub clip_scale: f64,
}

/// Scale factor bringing a gradient of global norm `norm` within `max_norm`.
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| {
            let x = x.f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// One AdamW update of `params` followed by the EMA update of `ema`.
pub fn optimizer_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState,
    ema: &mut ParamSet<T>,
    recipe: &TrainRecipe,
) -> Result<StepStats> {
    if grads.len() != params.len() || ema.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("optimizer inputs do not match the parameter set"));
    }
    for (id, g) in grads.iter().enumerate() {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape(format!("gradient for {} has the wrong shape", params.name(id))));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient for {} is not finite", params.name(id))));
        }
    }
    let grad_norm = global_norm(grads);
    let scale = clip_scale(grad_norm, recipe.grad_clip);
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (recipe.beta1, recipe.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let lr = recipe.lr_at(state.step as usize);
    let decay = 1.0 - lr * recipe.weight_decay;
    let d = recipe.ema_decay;
    for id in 0..params.len() {
        let g = grads[id].data();
        let (m, v) = (&mut state.m[id], &mut state.v[id]);
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g[i].f64() * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let updated = p[i].f64() * decay - lr * m_hat / (v_hat.sqrt() + recipe.adam_eps);
            p[i] = T::c(updated);
        }
        let e = ema.get_mut(id).data_mut();
        for i in 0..e.len() {
            e[i] = T::c(d * e[i].f64() + (1.0 - d) * p[i].f64());
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("parameters became non-finite at step {}", state.step)));
    }
    Ok(StepStats {
        grad_norm,
        clip_scale: scale,
    })
}
