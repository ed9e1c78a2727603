//! Mixture-of-experts multi-label classifier.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{random, Tensor};

/// Gate weights `[D, L * (E + 1)]` and expert weights `[D, L * E]`.
///
/// Column `l * (E + 1) + e` of the gate map scores expert `e` for label `l`;
/// column `l * (E + 1) + E` is the dummy expert, which always predicts 0.
#[derive(Debug, Clone, Copy)]
pub struct MoeParams {
    pub gate_w: Var,
    pub gate_b: Var,
    pub expert_w: Var,
    pub expert_b: Var,
    pub experts: usize,
    pub labels: usize,
}

impl MoeParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, experts: usize, labels: usize, rng: &mut impl Rng) {
        let gates = labels * (experts + 1);
        store.insert(format!("{prefix}/gate/w"), random::glorot(dim, gates, rng));
        store.insert(format!("{prefix}/gate/b"), Tensor::zeros([gates]));
        store.insert(format!("{prefix}/expert/w"), random::glorot(dim, labels * experts, rng));
        store.insert(format!("{prefix}/expert/b"), Tensor::zeros([labels * experts]));
    }

    pub fn bind(tape: &Tape, prefix: &str, experts: usize) -> Result<Self> {
        let p = |name: &str| tape.param(&format!("{prefix}/{name}"));
        let params = MoeParams {
            gate_w: p("gate/w")?,
            gate_b: p("gate/b")?,
            expert_w: p("expert/w")?,
            expert_b: p("expert/b")?,
            experts,
            labels: 0,
        };
        let gate_cols = tape.shape(params.gate_w)[1];
        let expert_cols = tape.shape(params.expert_w)[1];
        if experts == 0 || !gate_cols.is_multiple_of(experts + 1) || expert_cols != gate_cols / (experts + 1) * experts {
            return Err(Error::config(format!(
                "{prefix}: weights [{gate_cols}] / [{expert_cols}] do not fit {experts} experts"
            )));
        }
        Ok(MoeParams {
            labels: gate_cols / (experts + 1),
            ..params
        })
    }
}

/// `p_l = sum_e gate_{l,e}(v) * sigmoid(expert_{l,e}(v))` with the gates a
/// softmax over `E + 1` entries. `v: [.., D]` to `[.., L]`.
pub fn moe_head(tape: &mut Tape, v: Var, params: &MoeParams) -> Result<Var> {
    let dims = tape.shape(v).to_vec();
    let (e, l) = (params.experts, params.labels);
    let lifted = dims.len() == 1;
    let rows = if lifted { tape.reshape(v, [1, dims[0]])? } else { v };
    let lead = tape.shape(rows)[..tape.shape(rows).len() - 1].to_vec();

    let gate_logits = tape.linear(rows, params.gate_w, params.gate_b)?;
    let mut gate_dims = lead.clone();
    gate_dims.extend([l, e + 1]);
    let gate_logits = tape.reshape(gate_logits, gate_dims)?;
    let gates = tape.softmax(gate_logits, -1)?;
    let gates = tape.narrow(gates, -1, 0, e)?;

    let expert_logits = tape.linear(rows, params.expert_w, params.expert_b)?;
    let mut expert_dims = lead.clone();
    expert_dims.extend([l, e]);
    let expert_logits = tape.reshape(expert_logits, expert_dims)?;
    let experts = tape.sigmoid(expert_logits)?;

    let mixed = tape.mul(gates, experts)?;
    let out = tape.reduce_sum(mixed, -1)?;
    if lifted {
        tape.reshape(out, [l])
    } else {
        Ok(out)
    }
}
