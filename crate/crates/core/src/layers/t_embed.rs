//! Triangulation embedding: per-descriptor normalized residuals to every
//! cluster center, whitened with running diagonal statistics.

use crate::autodiff::{Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::layers::netvlad::NetVladParams;
use crate::params::Mode;
use crate::tensor::Tensor;

pub const WHITENING_MOMENTUM: f64 = 0.99;
/// Floor on every variance entry.
pub const WHITENING_EPS: f64 = 1e-5;

/// Running mean and diagonal covariance of the residual embedding.
///
/// The aggregation weights of the embedded descriptors are all 1; no
/// democratic re-weighting is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningState {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl WhiteningState {
    pub fn new(width: usize) -> Self {
        WhiteningState {
            mean: Tensor::zeros([width]),
            var: Tensor::ones([width]),
            momentum: WHITENING_MOMENTUM,
            eps: WHITENING_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Folds the moments of `rows: [.., width]` into the running estimates.
    pub fn update(&mut self, rows: &Tensor) -> Result<()> {
        let width = self.width();
        if rows.dims().last() != Some(&width) {
            return Err(Error::shape("whitening update", rows.dims(), &[width]));
        }
        let count = (rows.len() / width) as f64;
        let mut mean = vec![0.0; width];
        for row in rows.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / count;
            }
        }
        let mut var = vec![0.0; width];
        for row in rows.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / count;
            }
        }
        let (k, eps) = (self.momentum, self.eps);
        for (r, m) in self.mean.data_mut().iter_mut().zip(&mean) {
            *r = k * *r + (1.0 - k) * m;
        }
        for (r, v) in self.var.data_mut().iter_mut().zip(&var) {
            *r = (k * *r + (1.0 - k) * v).max(eps);
        }
        Ok(())
    }

    fn inv_std(&self) -> Tensor {
        self.var.map(|v| 1.0 / v.max(self.eps).sqrt())
    }
}

/// Concatenated unit residuals `R(x) = [r_1(x), .., r_K(x)]`, `[.., N, K*F]`.
pub fn normalized_residuals(tape: &mut Tape, x: Var, centers: Var) -> Result<Var> {
    let dims = tape.shape(x).to_vec();
    let k = tape.shape(centers)[0];
    let f = *dims.last().ok_or_else(|| Error::contract("t_embed on a scalar"))?;
    let mut lifted = dims.clone();
    lifted.insert(dims.len() - 1, 1);
    let x4 = tape.reshape(x, lifted)?;
    let residual = tape.sub(x4, centers)?;
    let unit = tape.l2_normalize(residual, -1, NORM_EPS)?;
    let mut flat = dims;
    *flat.last_mut().unwrap() = k * f;
    tape.reshape(unit, flat)
}

/// Per-descriptor embedding `phi_i = Sigma^{-1/2} (R(x_i) - E[R])`, `[.., N, K*F]`.
///
/// The running statistics are applied as constants. In training mode they
/// are updated from this batch afterwards, so the output is a pure
/// function of the inputs for a given state.
pub fn t_embed(
    tape: &mut Tape,
    x: Var,
    params: &NetVladParams,
    white: &mut WhiteningState,
    mode: Mode,
) -> Result<Var> {
    let r = normalized_residuals(tape, x, params.centers)?;
    let width = *tape.shape(r).last().unwrap_or(&0);
    if white.width() != width {
        return Err(Error::shape("t_embed whitening", tape.shape(r), &[white.width()]));
    }
    let mean = tape.constant(white.mean.clone());
    let inv_std = tape.constant(white.inv_std());
    let centered = tape.sub(r, mean)?;
    let phi = tape.mul(centered, inv_std)?;
    if mode.is_training() {
        white.update(tape.value(r))?;
    }
    Ok(phi)
}

/// `sum_i phi_i` over the descriptor axis: `[.., N, K*F]` to `[.., K*F]`.
pub fn t_embed_pooled(
    tape: &mut Tape,
    x: Var,
    params: &NetVladParams,
    white: &mut WhiteningState,
    mode: Mode,
) -> Result<Var> {
    let phi = t_embed(tape, x, params, white, mode)?;
    tape.reduce_sum(phi, -2)
}
