use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamKind};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay on weight matrices; keep at 0 while the loss carries
    /// its own L2 term.
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Real = f32> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        let zeros: Vec<Tensor<F>> = params.tensors.iter().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm<F: Real>(grads: &[Tensor<F>]) -> f64 {
    grads.iter().map(|g| g.sum_sq().as_f64()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        grads.iter_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}

/// One bias-corrected AdamW update. Nothing is modified when any gradient
/// is non-finite.
pub fn adamw_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &[Tensor<F>],
    state: &mut OptimizerState<F>,
    hp: &AdamW,
    lr: f64,
) -> Result<()> {
    let kinds: Vec<ParamKind> = params.layout().iter().map(|s| s.kind).collect();
    let mut tensors = params.tensors.iter_mut();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), tensors.len())));
    }
    for (g, p) in grads.iter().zip(tensors.iter()) {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged { step: state.step as usize, msg: format!("non-finite gradient in tensor {i}") });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::lit(hp.beta1), F::lit(hp.beta2));
    let c1 = F::lit(1.0 - hp.beta1.powi(t));
    let c2 = F::lit(1.0 - hp.beta2.powi(t));
    let (lr_f, eps) = (F::lit(lr), F::lit(hp.eps));
    for (i, p) in tensors.iter_mut().enumerate() {
        let decay = if kinds[i] == ParamKind::Weight { F::lit(hp.weight_decay) } else { F::zero() };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, (x, &gk)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            m[k] = b1 * m[k] + (F::one() - b1) * gk;
            v[k] = b2 * v[k] + (F::one() - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            *x = *x - lr_f * (mhat / (vhat.sqrt() + eps) + decay * *x);
        }
    }
    Ok(())
}
