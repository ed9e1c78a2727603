//! Second-order function-approximation embedding.
//!
//! For every descriptor and cluster `j` the block is
//! `[a_j, a_j * v_j, a'_j * vec(v'_j v'_j^T)]` where `v_j = x - c_j` lives in
//! the full feature space and `v'_j = P x - c'_j` lives in the projected
//! space of width `F'`. The projected block has its own centers and its own
//! assignment `a'`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::netvlad::{soft_assign, NetVladParams};
use crate::params::ParamStore;
use crate::tensor::random;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecondOrderConfig {
    pub dim: usize,
    pub projected: usize,
    pub clusters: usize,
}

impl SecondOrderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.projected == 0 || self.clusters == 0 {
            return Err(Error::config("second-order extents must be positive"));
        }
        if self.projected >= self.dim {
            return Err(Error::config(format!(
                "projected width {} must be below the input width {}",
                self.projected, self.dim
            )));
        }
        Ok(())
    }

    /// Width of one descriptor's embedding, `C * (1 + F + F'^2)`.
    pub fn embed_width(&self) -> usize {
        self.clusters * (1 + self.dim + self.projected * self.projected)
    }

    /// Initializes the projected-space parameters. The first-order
    /// [`NetVladParams`] are initialized separately.
    pub fn init(&self, store: &mut ParamStore, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let (f, p, c) = (self.dim, self.projected, self.clusters);
        store.insert(format!("{prefix}/projection"), random::normal([f, p], 1.0 / (f as f64).sqrt(), rng));
        store.insert(format!("{prefix}/centers"), random::normal([c, p], 1.0 / (p as f64).sqrt(), rng));
        store.insert(format!("{prefix}/keys"), random::normal([p, c], 1.0 / (p as f64).sqrt(), rng));
        store.insert(format!("{prefix}/bias"), random::normal([c], 0.1, rng));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SecondOrderParams {
    pub first: NetVladParams,
    pub projection: Var,
    pub centers: Var,
    pub keys: Var,
    pub bias: Var,
}

impl SecondOrderParams {
    pub fn bind(tape: &Tape, first: NetVladParams, prefix: &str) -> Result<Self> {
        let p = |name: &str| tape.param(&format!("{prefix}/{name}"));
        let params = SecondOrderParams {
            first,
            projection: p("projection")?,
            centers: p("centers")?,
            keys: p("keys")?,
            bias: p("bias")?,
        };
        params.config(tape).validate()?;
        Ok(params)
    }

    pub fn config(&self, tape: &Tape) -> SecondOrderConfig {
        let [dim, projected] = [tape.shape(self.projection)[0], tape.shape(self.projection)[1]];
        SecondOrderConfig {
            dim,
            projected,
            clusters: tape.shape(self.first.centers)[0],
        }
    }
}

/// Adds a trailing unit axis.
fn unsqueeze_last(tape: &mut Tape, x: Var) -> Result<Var> {
    let mut dims = tape.shape(x).to_vec();
    dims.push(1);
    tape.reshape(x, dims)
}

/// Residuals `x - c_j` for every cluster: `[.., N, F]` to `[.., N, C, F]`.
fn residuals(tape: &mut Tape, x: Var, centers: Var) -> Result<Var> {
    let mut dims = tape.shape(x).to_vec();
    dims.insert(dims.len() - 1, 1);
    let lifted = tape.reshape(x, dims)?;
    tape.sub(lifted, centers)
}

/// `x: [.., N, F]` to per-descriptor embeddings `[.., N, C * (1 + F + F'^2)]`.
pub fn second_order_embed(tape: &mut Tape, x: Var, params: &SecondOrderParams, temperature: f64) -> Result<Var> {
    let cfg = params.config(tape);
    cfg.validate()?;
    let dims = tape.shape(x).to_vec();
    if dims.last() != Some(&cfg.dim) {
        return Err(Error::shape("second_order_embed", &dims, &[cfg.dim]));
    }
    let lead = &dims[..dims.len() - 1];

    // Zeroth and first order in the full space.
    let assign = soft_assign(tape, x, params.first.keys, params.first.bias, temperature)?;
    let assign4 = unsqueeze_last(tape, assign)?;
    let v = residuals(tape, x, params.first.centers)?;
    let first = tape.mul(v, assign4)?;

    // Second order in the projected space.
    let projected = tape.matmul(x, params.projection)?;
    let assign2 = soft_assign(tape, projected, params.keys, params.bias, temperature)?;
    let assign2 = unsqueeze_last(tape, assign2)?;
    let v2 = residuals(tape, projected, params.centers)?;
    let mut col_dims = tape.shape(v2).to_vec();
    col_dims.push(1);
    let col = tape.reshape(v2, col_dims.clone())?;
    let p = cfg.projected;
    let mut row_dims = col_dims;
    let last = row_dims.len() - 1;
    row_dims[last - 1] = 1;
    row_dims[last] = p;
    let row = tape.reshape(v2, row_dims)?;
    let outer = tape.mul(col, row)?;
    let mut flat_dims = lead.to_vec();
    flat_dims.extend([cfg.clusters, p * p]);
    let outer = tape.reshape(outer, flat_dims)?;
    let second = tape.mul(outer, assign2)?;

    let blocks = tape.concat(&[assign4, first, second], -1)?;
    let mut out_dims = lead.to_vec();
    out_dims.push(cfg.embed_width());
    tape.reshape(blocks, out_dims)
}
