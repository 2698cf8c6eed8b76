use std::collections::BTreeMap;

use super::StageConfig;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrads};
use crate::tensor::Tensor;

const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter plus the update count.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay. `step` is only used for
/// diagnostics.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &StageConfig,
    lr: f64,
    step: usize,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                step,
                param: name.clone(),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, gd) = (p.data_mut(), g.data());
        for i in 0..pd.len() {
            let md = &mut m.data_mut()[i];
            *md = b1 * *md + (1.0 - b1) * gd[i];
            let mh = *md / c1;
            let vd = &mut v.data_mut()[i];
            *vd = b2 * *vd + (1.0 - b2) * gd[i] * gd[i];
            let vh = *vd / c2;
            pd[i] -= lr * (mh / (vh.sqrt() + ADAM_EPS) + cfg.weight_decay * pd[i]);
        }
    }
    Ok(())
}
