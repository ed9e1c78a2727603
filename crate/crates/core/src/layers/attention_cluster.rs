//! Attention clusters with the shifting operation.
//!
//! Each cluster `k` scores every frame with a small tanh network, softmaxes
//! the scores over frames into weights `a`, and emits
//! `(alpha_k * aX + beta_k) / (sqrt(N) * ||alpha_k * aX + beta_k||)`.
//! The outputs of all clusters are concatenated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{random, Tensor};

/// Whether the shift parameters are one scalar per cluster or one value per
/// feature per cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftShape {
    #[default]
    Scalar,
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionClusterConfig {
    pub dim: usize,
    pub clusters: usize,
    pub hidden: usize,
    pub shift: ShiftShape,
}

impl AttentionClusterConfig {
    /// Hidden width of the scoring network defaults to `dim / 2`.
    pub fn new(dim: usize, clusters: usize) -> Self {
        AttentionClusterConfig {
            dim,
            clusters,
            hidden: (dim / 2).max(1),
            shift: ShiftShape::Scalar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 || self.hidden == 0 {
            return Err(Error::config("attention cluster extents must be positive"));
        }
        Ok(())
    }

    fn shift_dims(&self) -> [usize; 2] {
        match self.shift {
            ShiftShape::Scalar => [self.clusters, 1],
            ShiftShape::Vector => [self.clusters, self.dim],
        }
    }

    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let (f, k, h) = (self.dim, self.clusters, self.hidden);
        store.insert(format!("{prefix}/w1"), random::glorot(f, k * h, rng));
        store.insert(format!("{prefix}/b1"), Tensor::zeros([k * h]));
        store.insert(format!("{prefix}/w2"), random::normal([k, h], (1.0 / h as f64).sqrt(), rng));
        store.insert(format!("{prefix}/b2"), Tensor::zeros([k]));
        store.insert(format!("{prefix}/alpha"), Tensor::ones(self.shift_dims()));
        store.insert(format!("{prefix}/beta"), Tensor::zeros(self.shift_dims()));
        Ok(())
    }
}

/// Tape handles for one attention-cluster block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionClusterParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl AttentionClusterParams {
    pub fn bind(tape: &Tape, prefix: &str) -> Result<Self> {
        let p = |name: &str| tape.param(&format!("{prefix}/{name}"));
        Ok(AttentionClusterParams {
            w1: p("w1")?,
            b1: p("b1")?,
            w2: p("w2")?,
            b2: p("b2")?,
            alpha: p("alpha")?,
            beta: p("beta")?,
        })
    }
}

/// Attention weights `[.., N, K]`, softmax-normalized over frames.
pub fn attention_weights(tape: &mut Tape, x: Var, params: &AttentionClusterParams) -> Result<Var> {
    let [clusters, hidden] = <[usize; 2]>::try_from(tape.shape(params.w2))
        .map_err(|_| Error::config("attention w2 must be [clusters, hidden]"))?;
    let h = tape.linear(x, params.w1, params.b1)?;
    let h = tape.tanh(h)?;
    let mut dims = tape.shape(h).to_vec();
    dims.pop();
    dims.extend([clusters, hidden]);
    let h = tape.reshape(h, dims)?;
    let scored = tape.mul(h, params.w2)?;
    let logits = tape.reduce_sum(scored, -1)?;
    let logits = tape.add(logits, params.b2)?;
    tape.softmax(logits, -2)
}

/// `x: [.., N, F]` to `[.., K * F]`.
pub fn attention_cluster(tape: &mut Tape, x: Var, params: &AttentionClusterParams) -> Result<Var> {
    let dims = tape.shape(x).to_vec();
    if dims.len() < 2 {
        return Err(Error::contract("attention_cluster expects [.., N, F]"));
    }
    let frames = dims[dims.len() - 2];
    let weights = attention_weights(tape, x, params)?;
    let weights_t = tape.transpose(weights)?;
    let pooled = tape.matmul(weights_t, x)?;
    let shifted = tape.mul(pooled, params.alpha)?;
    let shifted = tape.add(shifted, params.beta)?;
    let unit = tape.l2_normalize(shifted, -1, NORM_EPS)?;
    let psi = tape.scale(unit, 1.0 / (frames as f64).sqrt())?;
    let mut out_dims = tape.shape(psi).to_vec();
    let f = out_dims.pop().unwrap_or(1);
    let k = out_dims.pop().unwrap_or(1);
    out_dims.push(k * f);
    tape.reshape(psi, out_dims)
}
