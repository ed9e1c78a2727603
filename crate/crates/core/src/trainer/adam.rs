use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter path.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moments as checkpoint extras: `adam/m/<path>` and `adam/v/<path>`.
    pub fn to_extra(&self) -> BTreeMap<String, Tensor> {
        let m = self.m.iter().map(|(p, t)| (format!("adam/m/{p}"), t.clone()));
        let v = self.v.iter().map(|(p, t)| (format!("adam/v/{p}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn from_extra(extra: &BTreeMap<String, Tensor>, step: u64, params: &ParamStore) -> Result<Self> {
        let mut state = AdamState {
            step,
            ..Self::default()
        };
        for (name, t) in extra {
            let (moments, path) = if let Some(p) = name.strip_prefix("adam/m/") {
                (&mut state.m, p)
            } else if let Some(p) = name.strip_prefix("adam/v/") {
                (&mut state.v, p)
            } else {
                continue;
            };
            let param = params.get(path)?;
            if param.dims() != t.dims() {
                return Err(Error::shape("adam moment", t.dims(), param.dims()));
            }
            moments.insert(path.to_string(), t.clone());
        }
        if step > 0 && (state.m.len() != params.len() || state.v.len() != params.len()) {
            return Err(Error::config("checkpoint lacks optimizer moments for some parameters"));
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
///
/// All gradients are checked before anything is modified; a non-finite
/// entry aborts the step and names the parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (path, g) in grads {
        let p = params.get(path)?;
        if p.dims() != g.dims() {
            return Err(Error::shape("adam_step", g.dims(), p.dims()));
        }
        if !g.is_finite() {
            return Err(Error::numeric(format!("gradient of parameter {path}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (path, g) in grads {
        let m = state.m.entry(path.clone()).or_insert_with(|| Tensor::zeros(g.dims().to_vec()));
        let v = state.v.entry(path.clone()).or_insert_with(|| Tensor::zeros(g.dims().to_vec()));
        let p = params.get_mut(path)?;
        for (((w, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
