#![allow(dead_code)]

pub mod fuzz;
pub mod gap_oracle;

use poolforge::tensor::random;
use poolforge::{grad_check, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var};

/// Contracts `out` with fixed pseudo-random weights into a scalar.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> poolforge::Result<Var> {
    let w = random::normal(tape.value(out).shape().clone(), 1.0, &mut random::rng(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Grad-checks `f` with respect to the input tensor and every parameter in
/// `store`, through a random linear read-out of its output.
pub fn check_with_params(
    store: &ParamStore,
    x: &Tensor,
    tolerance: f64,
    f: impl Fn(&mut Tape, Var) -> poolforge::Result<Var>,
) -> GradCheckReport {
    let names: Vec<String> = store.paths().map(str::to_string).collect();
    let mut inputs = vec![x.clone()];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    grad_check(
        |tape, vars| {
            for (name, &v) in names.iter().zip(&vars[1..]) {
                tape.bind(name.clone(), v);
            }
            let out = f(tape, vars[0])?;
            weighted_sum(tape, out, 4242)
        },
        &inputs,
        GradCheckOptions::with_tolerance(tolerance),
    )
    .expect("grad_check evaluation failed")
}

/// Applies a row permutation along axis `axis` of a `[.., N, F]` tensor
/// where `axis` is the frame axis (second to last).
pub fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let dims = x.dims();
    let n = dims[dims.len() - 2];
    let f = dims[dims.len() - 1];
    let outer = x.len() / (n * f);
    let mut data = Vec::with_capacity(x.len());
    for o in 0..outer {
        for &p in perm {
            let start = (o * n + p) * f;
            data.extend_from_slice(&x.data()[start..start + f]);
        }
    }
    Tensor::new(dims.to_vec(), data).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut random::rng(seed));
    p
}

pub fn forward(store: &ParamStore, f: impl FnOnce(&mut Tape) -> poolforge::Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    store.bind(&mut tape);
    let out = f(&mut tape).unwrap();
    tape.value(out).clone()
}
