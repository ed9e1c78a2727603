//! Batch normalization over every leading axis, with running statistics.

use crate::autodiff::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCH_NORM_MOMENTUM: f64 = 0.99;
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Running statistics of one batch-norm site.
///
/// Updates follow `running = momentum * running + (1 - momentum) * batch`,
/// using the biased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl NormState {
    pub fn new(width: usize) -> Self {
        NormState {
            running_mean: Tensor::zeros([width]),
            running_var: Tensor::ones([width]),
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }
}

impl Tape {
    /// Normalizes the last axis of `x` over all other axes.
    ///
    /// In training mode the batch moments are used (and differentiated
    /// through) and `state` is updated; otherwise the running moments are
    /// applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut NormState,
        training: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv
            .dims()
            .last()
            .ok_or_else(|| Error::contract("batch_norm on a scalar"))?;
        if state.width() != width || self.value(gamma).len() != width || self.value(beta).len() != width {
            return Err(Error::shape("batch_norm", xv.dims(), &[state.width()]));
        }
        let rows = xv.len() / width;
        if training && rows < 2 {
            return Err(Error::contract(
                "batch_norm in training mode needs at least 2 rows",
            ));
        }

        let (mean, var) = if training {
            let mut mean = vec![0.0; width];
            for row in xv.data().chunks(width) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; width];
            for row in xv.data().chunks(width) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            (mean, var)
        } else {
            (
                state.running_mean.data().to_vec(),
                state.running_var.data().to_vec(),
            )
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut normalized = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(width) {
            normalized.extend(
                row.iter()
                    .zip(&mean)
                    .zip(&inv_std)
                    .map(|((v, m), s)| (v - m) * s),
            );
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = normalized
            .chunks(width)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((n, g), b)| n * g + b))
            .collect();
        let normalized = Tensor::from_parts(xv.shape().clone(), normalized);
        let out = Tensor::from_parts(xv.shape().clone(), out);

        if training {
            let m = state.momentum;
            for (r, v) in state.running_mean.data_mut().iter_mut().zip(&mean) {
                *r = m * *r + (1.0 - m) * v;
            }
            for (r, v) in state.running_var.data_mut().iter_mut().zip(&var) {
                *r = m * *r + (1.0 - m) * v;
            }
        }

        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
            training,
        };
        self.push("batch_norm", out, op, &[x, gamma, beta])
    }
}

pub(crate) fn batch_norm_backward(
    gamma: &Tensor,
    normalized: &Tensor,
    inv_std: &[f64],
    training: bool,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let width = gamma.len();
    let rows = normalized.len() / width;
    let gamma = gamma.data();
    let mut ggamma = vec![0.0; width];
    let mut gbeta = vec![0.0; width];
    for (grow, nrow) in g.data().chunks(width).zip(normalized.data().chunks(width)) {
        for d in 0..width {
            ggamma[d] += grow[d] * nrow[d];
            gbeta[d] += grow[d];
        }
    }
    let mut gx = vec![0.0; normalized.len()];
    if training {
        // d xhat = g * gamma; dx = inv_std / m * (m dxhat - sum dxhat - xhat sum(dxhat xhat))
        let m = rows as f64;
        let sum_dxhat: Vec<f64> = (0..width).map(|d| gbeta[d] * gamma[d]).collect();
        let sum_dxhat_xhat: Vec<f64> = (0..width).map(|d| ggamma[d] * gamma[d]).collect();
        for ((out, grow), nrow) in gx
            .chunks_mut(width)
            .zip(g.data().chunks(width))
            .zip(normalized.data().chunks(width))
        {
            for d in 0..width {
                let dxhat = grow[d] * gamma[d];
                out[d] = inv_std[d] / m * (m * dxhat - sum_dxhat[d] - nrow[d] * sum_dxhat_xhat[d]);
            }
        }
    } else {
        for (out, grow) in gx.chunks_mut(width).zip(g.data().chunks(width)) {
            for d in 0..width {
                out[d] = grow[d] * gamma[d] * inv_std[d];
            }
        }
    }
    (
        Tensor::from_parts(normalized.shape().clone(), gx),
        Tensor::vector(&ggamma),
        Tensor::vector(&gbeta),
    )
}
