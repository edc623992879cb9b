use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Linear warmup from 0 to `lr_peak`, then half-cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, lr_peak: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr_peak * step as f64 / warmup_steps as f64;
    }
    if total_steps == warmup_steps {
        return lr_peak;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    lr_peak * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(ps: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = ps.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
///
/// Parameters without a gradient (frozen, or off the loss path) are left untouched.
pub fn adamw_step<T: Scalar>(
    ps: &mut ParamSet<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != ps.len() || state.m.len() != ps.len() {
        return Err(Error::dim(
            "adamw_step",
            format!("{} params, {} grads, {} moment slots", ps.len(), grads.len(), state.m.len()),
        ));
    }
    for (e, g) in ps.entries().iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != e.value.shape() {
                return Err(Error::dim(
                    "adamw_step",
                    format!("gradient {:?} for `{}` of shape {:?}", g.shape(), e.name, e.value.shape()),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let decay = lr * cfg.weight_decay;
    for (i, e) in ps.entries_mut().iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if !e.trainable {
            continue;
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (theta, &gj)) in e.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let th = theta.as_f64();
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            *theta = T::from_f64(th - update - decay * th);
        }
    }
    Ok(())
}
