//! Soft-assignment VLAD pooling.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::random;

/// Maximum deviation from 1 tolerated in externally supplied similarity rows.
pub const SIMILARITY_ROW_TOLERANCE: f64 = 1e-6;

/// Cluster centers `[C, F]` plus the linear assignment map `X . keys + bias`.
#[derive(Debug, Clone, Copy)]
pub struct NetVladParams {
    pub centers: Var,
    pub keys: Var,
    pub bias: Var,
}

impl NetVladParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, clusters: usize, rng: &mut impl Rng) {
        store.insert(format!("{prefix}/centers"), random::normal([clusters, dim], 1.0 / (dim as f64).sqrt(), rng));
        store.insert(format!("{prefix}/keys"), random::normal([dim, clusters], 1.0 / (dim as f64).sqrt(), rng));
        store.insert(format!("{prefix}/bias"), random::normal([clusters], 0.1, rng));
    }

    pub fn bind(tape: &Tape, prefix: &str) -> Result<Self> {
        Ok(NetVladParams {
            centers: tape.param(&format!("{prefix}/centers"))?,
            keys: tape.param(&format!("{prefix}/keys"))?,
            bias: tape.param(&format!("{prefix}/bias"))?,
        })
    }

    pub fn clusters(&self, tape: &Tape) -> usize {
        tape.shape(self.centers)[0]
    }
}

/// `softmax(temperature * (X . keys + bias))` over clusters: `[.., N, C]`.
pub fn soft_assign(tape: &mut Tape, x: Var, keys: Var, bias: Var, temperature: f64) -> Result<Var> {
    let logits = tape.linear(x, keys, bias)?;
    let logits = if temperature == 1.0 {
        logits
    } else {
        tape.scale(logits, temperature)?
    };
    tape.softmax(logits, -1)
}

/// `out[j] = sum_k a_j(x_k) (x_k - c_j)` for `x: [.., N, F]`, giving `[.., C, F]`.
///
/// With `similarities = None` the assignment is computed from the layer's
/// own keys; otherwise the supplied `[.., N, C]` rows are used and must each
/// sum to 1.
pub fn netvlad(
    tape: &mut Tape,
    x: Var,
    params: &NetVladParams,
    temperature: f64,
    similarities: Option<Var>,
) -> Result<Var> {
    let clusters = params.clusters(tape);
    let assign = match similarities {
        Some(s) => {
            check_similarity_rows(tape, s, clusters)?;
            s
        }
        None => soft_assign(tape, x, params.keys, params.bias, temperature)?,
    };
    vlad_from_assignment(tape, x, assign, params.centers)
}

/// Residual aggregation given an assignment `[.., N, C]` and centers `[C, F]`.
pub fn vlad_from_assignment(tape: &mut Tape, x: Var, assign: Var, centers: Var) -> Result<Var> {
    let assign_t = tape.transpose(assign)?;
    let weighted = tape.matmul(assign_t, x)?;
    let mass = tape.reduce_sum(assign, -2)?;
    let mut mass_dims = tape.shape(mass).to_vec();
    mass_dims.push(1);
    let mass = tape.reshape(mass, mass_dims)?;
    let shift = tape.mul(mass, centers)?;
    tape.sub(weighted, shift)
}

fn check_similarity_rows(tape: &Tape, s: Var, clusters: usize) -> Result<()> {
    let value = tape.value(s);
    if value.dims().last() != Some(&clusters) {
        return Err(Error::shape("netvlad similarities", value.dims(), &[clusters]));
    }
    for (i, row) in value.rows().enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > SIMILARITY_ROW_TOLERANCE {
            return Err(Error::contract(format!(
                "similarity row {i} sums to {total}, expected 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn single_cluster_unit_assignment_sums_descriptors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap());
        let params = NetVladParams {
            centers: tape.leaf(Tensor::zeros([1, 2])),
            keys: tape.leaf(Tensor::zeros([2, 1])),
            bias: tape.leaf(Tensor::zeros([1])),
        };
        let out = netvlad(&mut tape, x, &params, 1.0, None).unwrap();
        assert_eq!(tape.value(out).dims(), &[1, 2]);
        assert_eq!(tape.value(out).data(), &[4.5, 1.5]);
    }

    #[test]
    fn single_frame_matches_hand_computation() {
        let mut tape = Tape::new();
        let x1 = [0.5, -1.0];
        let x = tape.leaf(Tensor::matrix(&[x1]).unwrap());
        let centers = [[0.0, 1.0], [1.0, 0.0]];
        let keys = [[1.0, -1.0], [0.5, 2.0]];
        let bias = [0.1, -0.2];
        let params = NetVladParams {
            centers: tape.leaf(Tensor::matrix(&centers).unwrap()),
            keys: tape.leaf(Tensor::matrix(&keys).unwrap()),
            bias: tape.leaf(Tensor::vector(&bias)),
        };
        let out = netvlad(&mut tape, x, &params, 1.0, None).unwrap();
        let logits: Vec<f64> = (0..2)
            .map(|j| x1[0] * keys[0][j] + x1[1] * keys[1][j] + bias[j])
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let a: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let got = tape.value(out);
        for j in 0..2 {
            for i in 0..2 {
                let want = a[j] * (x1[i] - centers[j][i]);
                assert!((got.at(&[j, i]) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_similarities_that_do_not_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2, 3]));
        let params = NetVladParams {
            centers: tape.leaf(Tensor::zeros([2, 3])),
            keys: tape.leaf(Tensor::zeros([3, 2])),
            bias: tape.leaf(Tensor::zeros([2])),
        };
        let bad = tape.constant(Tensor::matrix(&[[0.5, 0.5], [0.7, 0.2]]).unwrap());
        assert!(matches!(netvlad(&mut tape, x, &params, 1.0, Some(bad)), Err(Error::Contract(_))));
        let good = tape.constant(Tensor::matrix(&[[0.5, 0.5], [0.8, 0.2]]).unwrap());
        assert!(netvlad(&mut tape, x, &params, 1.0, Some(good)).is_ok());
    }
}
