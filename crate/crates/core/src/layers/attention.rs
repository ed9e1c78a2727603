//! Scaled dot-product attention and the transformer encoder blocks.
//!
//! The encoder has no positional encoding and no layer normalization, so it
//! is equivariant to row permutations, and zeroing the output projection and
//! the last feed-forward layer turns it into the identity. Batch
//! normalization is applied to the query, key and value projections when
//! `inner_norm` is set.

use rand::Rng;

use crate::autodiff::{NormState, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Mode, ModelState, ParamStore};
use crate::tensor::{random, Tensor};

/// `softmax(Q K^T / sqrt(d)) V` for `Q: [.., Nq, d]`, `K, V: [.., Nk, d]`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qd, kd, vd) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qd.len() < 2 || kd.len() < 2 || vd.len() < 2 {
        return Err(Error::shape("scaled_dot_attention", qd, kd));
    }
    if kd[kd.len() - 2] != vd[vd.len() - 2] {
        return Err(Error::shape("scaled_dot_attention", kd, vd));
    }
    let d = *qd.last().unwrap_or(&1);
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax(scores, -1)?;
    tape.matmul(weights, v)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerConfig {
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Output width of the last feed-forward layer. `None` keeps `width` and
    /// the final residual; `Some(c)` gives the starred variant without it.
    pub out_width: Option<usize>,
    pub inner_norm: bool,
}

impl TransformerConfig {
    /// Encoder with feed-forward inner width `2 * width`.
    pub fn encoder(width: usize, heads: usize) -> Self {
        TransformerConfig {
            width,
            heads,
            ff_width: 2 * width,
            out_width: None,
            inner_norm: true,
        }
    }

    /// Variant whose last layer projects to `out` and drops the last residual.
    pub fn star(width: usize, heads: usize, out: usize) -> Self {
        TransformerConfig {
            out_width: Some(out),
            ..Self::encoder(width, heads)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.ff_width == 0 || self.out_width == Some(0) {
            return Err(Error::config("transformer extents must be positive"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn init(&self, store: &mut ParamStore, state: &mut ModelState, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        self.validate()?;
        let f = self.width;
        for proj in ["q", "k", "v"] {
            store.insert(format!("{prefix}/w{proj}"), random::glorot(f, f, rng));
            store.insert(format!("{prefix}/b{proj}"), Tensor::zeros([f]));
            if self.inner_norm {
                store.insert(format!("{prefix}/bn_{proj}/gamma"), Tensor::ones([f]));
                store.insert(format!("{prefix}/bn_{proj}/beta"), Tensor::zeros([f]));
                state.norms.insert(format!("{prefix}/bn_{proj}"), NormState::new(f));
            }
        }
        store.insert(format!("{prefix}/wo"), random::glorot(f, f, rng));
        store.insert(format!("{prefix}/bo"), Tensor::zeros([f]));
        let out = self.out_width.unwrap_or(f);
        store.insert(format!("{prefix}/ff1/w"), random::glorot(f, self.ff_width, rng));
        store.insert(format!("{prefix}/ff1/b"), Tensor::zeros([self.ff_width]));
        store.insert(format!("{prefix}/ff2/w"), random::glorot(self.ff_width, out, rng));
        store.insert(format!("{prefix}/ff2/b"), Tensor::zeros([out]));
        Ok(())
    }
}

/// Tape handles for one encoder block.
#[derive(Debug, Clone)]
pub struct TransformerParams {
    pub prefix: String,
    pub heads: usize,
    pub projections: [(Var, Var); 3],
    pub norms: Option<[(Var, Var); 3]>,
    pub out: (Var, Var),
    pub ff1: (Var, Var),
    pub ff2: (Var, Var),
}

impl TransformerParams {
    pub fn bind(tape: &Tape, prefix: &str, config: &TransformerConfig) -> Result<Self> {
        config.validate()?;
        let p = |name: &str| tape.param(&format!("{prefix}/{name}"));
        let pair = |w: &str, b: &str| -> Result<(Var, Var)> { Ok((p(w)?, p(b)?)) };
        let projections = [pair("wq", "bq")?, pair("wk", "bk")?, pair("wv", "bv")?];
        let norms = if config.inner_norm {
            Some([
                pair("bn_q/gamma", "bn_q/beta")?,
                pair("bn_k/gamma", "bn_k/beta")?,
                pair("bn_v/gamma", "bn_v/beta")?,
            ])
        } else {
            None
        };
        let params = TransformerParams {
            prefix: prefix.to_string(),
            heads: config.heads,
            projections,
            norms,
            out: pair("wo", "bo")?,
            ff1: pair("ff1/w", "ff1/b")?,
            ff2: pair("ff2/w", "ff2/b")?,
        };
        let width = tape.shape(params.out.0)[0];
        if width != config.width {
            return Err(Error::config(format!(
                "{prefix}: bound width {width} differs from configured {}",
                config.width
            )));
        }
        Ok(params)
    }

    fn width(&self, tape: &Tape) -> usize {
        tape.shape(self.out.0)[0]
    }
}

/// Lifts `[N, F]` to `[1, N, F]`; returns whether it did.
fn ensure_batched(tape: &mut Tape, x: Var) -> Result<(Var, bool)> {
    match tape.shape(x).len() {
        2 => {
            let mut dims = vec![1];
            dims.extend_from_slice(tape.shape(x));
            Ok((tape.reshape(x, dims)?, true))
        }
        3 => Ok((x, false)),
        _ => Err(Error::contract("transformer input must be [N, F] or [B, N, F]")),
    }
}

fn unbatch(tape: &mut Tape, y: Var, lifted: bool) -> Result<Var> {
    if lifted {
        let dims = tape.shape(y)[1..].to_vec();
        tape.reshape(y, dims)
    } else {
        Ok(y)
    }
}

/// Multi-head self-attention over the rows of `x: [B, N, F]` (or `[N, F]`).
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    params: &TransformerParams,
    state: &mut ModelState,
    mode: Mode,
) -> Result<Var> {
    let (x, lifted) = ensure_batched(tape, x)?;
    let dims = tape.shape(x).to_vec();
    let (b, n, f) = (dims[0], dims[1], dims[2]);
    let width = params.width(tape);
    if f != width {
        return Err(Error::shape("multi_head_attention", &dims, &[width]));
    }
    let h = params.heads;
    let d = f / h;

    let mut heads = Vec::with_capacity(3);
    for (i, (w, bias)) in params.projections.iter().enumerate() {
        let mut proj = tape.linear(x, *w, *bias)?;
        if let Some(norms) = &params.norms {
            let site = format!("{}/bn_{}", params.prefix, ["q", "k", "v"][i]);
            let (gamma, beta) = norms[i];
            proj = tape.batch_norm(proj, gamma, beta, state.norm_mut(&site)?, mode.is_training())?;
        }
        let split = tape.reshape(proj, [b, n, h, d])?;
        heads.push(tape.permute(split, &[0, 2, 1, 3])?);
    }
    let attended = scaled_dot_attention(tape, heads[0], heads[1], heads[2])?;
    let merged = tape.permute(attended, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, [b, n, f])?;
    let out = tape.linear(merged, params.out.0, params.out.1)?;
    unbatch(tape, out, lifted)
}

/// Attention plus residual, then the two-layer feed-forward plus residual.
/// Shape-preserving: `[.., N, F]` to `[.., N, F]`.
pub fn transformer_encoder(
    tape: &mut Tape,
    x: Var,
    params: &TransformerParams,
    state: &mut ModelState,
    mode: Mode,
) -> Result<Var> {
    let attended = multi_head_attention(tape, x, params, state, mode)?;
    let y = tape.add(x, attended)?;
    let hidden = tape.linear(y, params.ff1.0, params.ff1.1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.linear(hidden, params.ff2.0, params.ff2.1)?;
    if tape.shape(out) != tape.shape(y) {
        return Err(Error::config(format!(
            "{}: encoder feed-forward must preserve width",
            params.prefix
        )));
    }
    tape.add(y, out)
}

/// The starred encoder: `[.., N, F]` to `[.., N, C]` without the last residual.
pub fn transformer_encoder_star(
    tape: &mut Tape,
    x: Var,
    params: &TransformerParams,
    state: &mut ModelState,
    mode: Mode,
) -> Result<Var> {
    let attended = multi_head_attention(tape, x, params, state, mode)?;
    let y = tape.add(x, attended)?;
    let hidden = tape.linear(y, params.ff1.0, params.ff1.1)?;
    let hidden = tape.relu(hidden)?;
    tape.linear(hidden, params.ff2.0, params.ff2.1)
}
