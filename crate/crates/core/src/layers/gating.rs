use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{random, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GatingParams {
    pub weight: Var,
    pub bias: Var,
}

impl GatingParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) {
        store.insert(format!("{prefix}/w"), random::glorot(dim, dim, rng));
        store.insert(format!("{prefix}/b"), Tensor::zeros([dim]));
    }

    pub fn bind(tape: &Tape, prefix: &str) -> Result<Self> {
        Ok(GatingParams {
            weight: tape.param(&format!("{prefix}/w"))?,
            bias: tape.param(&format!("{prefix}/b"))?,
        })
    }
}

/// Context gating: `sigmoid(x W + b) * x`, elementwise. `x` is `[D]` or `[.., D]`.
pub fn context_gating(tape: &mut Tape, x: Var, params: &GatingParams) -> Result<Var> {
    let dims = tape.shape(x).to_vec();
    let rows = if dims.len() == 1 {
        tape.reshape(x, vec![1, dims[0]])?
    } else {
        x
    };
    let logits = tape.linear(rows, params.weight, params.bias)?;
    let logits = tape.reshape(logits, dims)?;
    let gate = tape.sigmoid(logits)?;
    tape.mul(gate, x)
}
