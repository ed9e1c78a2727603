use poolforge::tensor::random;
use poolforge::{grad_check, GradCheckOptions, NormState, Tape, Tensor, Var};
use proptest::prelude::*;

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
            }
        }
    }
    out
}

fn forward(f: impl FnOnce(&mut Tape) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let out = f(&mut tape);
    tape.value(out).clone()
}

#[test]
fn matmul_examples() {
    let eye = Tensor::matrix(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let m = Tensor::matrix(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
    let out = forward(|t| {
        let (a, b) = (t.leaf(eye.clone()), t.leaf(m.clone()));
        t.matmul(a, b).unwrap()
    });
    assert_eq!(out, m);

    let out = forward(|t| {
        let a = t.leaf(Tensor::matrix(&[[1.0, 2.0]]).unwrap());
        let b = t.leaf(Tensor::matrix(&[[3.0], [4.0]]).unwrap());
        t.matmul(a, b).unwrap()
    });
    assert_eq!(out.data(), &[11.0]);

    let mut rng = random::rng(7);
    let a = random::normal([3, 4], 1.0, &mut rng);
    let b = random::normal([4, 2], 1.0, &mut rng);
    let out = forward(|t| {
        let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
        t.matmul(x, y).unwrap()
    });
    for (got, want) in out.data().iter().zip(naive_matmul(&a, &b)) {
        assert!((got - want).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let a = random::normal([m, k], 1.0, &mut rng);
        let b = random::normal([k, n], 1.0, &mut rng);
        let out = forward(|t| {
            let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
            t.matmul(x, y).unwrap()
        });
        for (got, want) in out.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn batched_matmul_matches_per_slice(batch in 1usize..=4, m in 1usize..=5, k in 1usize..=5, n in 1usize..=5, seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let a = random::normal([batch, m, k], 1.0, &mut rng);
        let b = random::normal([batch, k, n], 1.0, &mut rng);
        let out = forward(|t| {
            let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
            t.matmul(x, y).unwrap()
        });
        for s in 0..batch {
            let slice = |t: &Tensor, r, c| Tensor::new([r, c], t.data()[s * r * c..(s + 1) * r * c].to_vec()).unwrap();
            let want = naive_matmul(&slice(&a, m, k), &slice(&b, k, n));
            let got = &out.data()[s * m * n..(s + 1) * m * n];
            for (g, w) in got.iter().zip(want) {
                prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, scale in 0.1f64..500.0, seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let x = random::normal([rows, cols], scale, &mut rng);
        let y = forward(|t| { let v = t.leaf(x.clone()); t.softmax(v, -1).unwrap() });
        for row in y.rows() {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn l2_normalize_norm_law(len in 1usize..10, scale in 1e-14f64..1e3, seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let x = random::normal([len], scale, &mut rng);
        let y = forward(|t| { let v = t.leaf(x.clone()); t.l2_normalize(v, 0, 1e-12).unwrap() });
        let norm = y.norm();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-10 || x.norm() < 1e-12, "norm {}", norm);
    }
}

#[test]
fn softmax_examples() {
    let y = forward(|t| {
        let v = t.leaf(Tensor::vector(&[0.0, 0.0, 0.0]));
        t.softmax(v, 0).unwrap()
    });
    for p in y.data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let y = forward(|t| {
        let v = t.leaf(Tensor::vector(&[1000.0, 1000.0]));
        t.softmax(v, 0).unwrap()
    });
    assert_eq!(y.data(), &[0.5, 0.5]);

    // 40-digit evaluation of exp(x_i) / sum_j exp(x_j).
    let reference = [
        0.090_030_573_170_380_457_998_022_1,
        0.244_728_471_054_797_652_472_959_6,
        0.665_240_955_774_821_889_529_018_3,
    ];
    let y = forward(|t| {
        let v = t.leaf(Tensor::vector(&[1.0, 2.0, 3.0]));
        t.softmax(v, 0).unwrap()
    });
    for (got, want) in y.data().iter().zip(reference) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn l2_normalize_examples() {
    let y = forward(|t| {
        let v = t.leaf(Tensor::vector(&[3.0, 4.0]));
        t.l2_normalize(v, 0, 1e-12).unwrap()
    });
    assert!((y.data()[0] - 0.6).abs() < 1e-15 && (y.data()[1] - 0.8).abs() < 1e-15);
    let y = forward(|t| {
        let v = t.leaf(Tensor::vector(&[0.0, 0.0]));
        t.l2_normalize(v, 0, 1e-12).unwrap()
    });
    assert_eq!(y.data(), &[0.0, 0.0]);
    let mut rng = random::rng(3);
    let x = random::normal([5], 1.0, &mut rng);
    let y = forward(|t| {
        let v = t.leaf(x.clone());
        t.l2_normalize(v, 0, 1e-12).unwrap()
    });
    assert!((y.norm() - 1.0).abs() < 1e-12);
}

/// Contracts an op's output with fixed random weights so every output
/// coordinate contributes a distinct amount to the scalar.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> poolforge::Result<Var> {
    let w = random::normal(tape.value(out).shape().clone(), 1.0, &mut random::rng(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check_op(name: &str, inputs: &[Tensor], tol: f64, op: impl Fn(&mut Tape, &[Var]) -> poolforge::Result<Var>) {
    let report = grad_check(
        |tape, vars| {
            let out = op(tape, vars)?;
            weighted_sum(tape, out, 99)
        },
        inputs,
        GradCheckOptions::with_tolerance(tol),
    )
    .unwrap();
    assert!(report.passed, "{name}: {report:?}");
}

#[test]
fn every_elementwise_op_matches_finite_differences() {
    const TOL: f64 = 1e-6;
    for seed in 0..5u64 {
        let mut rng = random::rng(seed);
        let mut n = |dims: &[usize]| random::normal(dims.to_vec(), 1.0, &mut rng);
        let a = n(&[3, 4]);
        let b = n(&[3, 4]);
        let row = n(&[4]);
        let col = n(&[3, 1]);
        let positive = a.map(|v| v.abs() + 0.5);

        check_op("add", &[a.clone(), b.clone()], TOL, |t, v| t.add(v[0], v[1]));
        check_op("add broadcast", &[a.clone(), row.clone()], TOL, |t, v| t.add(v[0], v[1]));
        check_op("sub broadcast", &[a.clone(), col.clone()], TOL, |t, v| t.sub(v[0], v[1]));
        check_op("mul", &[a.clone(), b.clone()], TOL, |t, v| t.mul(v[0], v[1]));
        check_op("mul broadcast", &[col.clone(), row.clone()], TOL, |t, v| t.mul(v[0], v[1]));
        check_op("scale", &[a.clone()], TOL, |t, v| t.scale(v[0], -1.7));
        check_op("add_scalar", &[a.clone()], TOL, |t, v| t.add_scalar(v[0], 0.3));
        check_op("relu", &[a.clone()], TOL, |t, v| t.relu(v[0]));
        check_op("sigmoid", &[a.clone()], TOL, |t, v| t.sigmoid(v[0]));
        check_op("tanh", &[a.clone()], TOL, |t, v| t.tanh(v[0]));
        check_op("sqrt", &[positive.clone()], TOL, |t, v| t.sqrt(v[0]));
        check_op("ln", &[positive.clone()], TOL, |t, v| t.ln(v[0]));
        check_op("reshape", &[a.clone()], TOL, |t, v| t.reshape(v[0], [2, 6]));
        check_op("transpose", &[a.clone()], TOL, |t, v| t.transpose(v[0]));
        check_op("permute", &[n(&[2, 3, 4])], TOL, |t, v| t.permute(v[0], &[2, 0, 1]));
        check_op("concat", &[a.clone(), col.clone()], TOL, |t, v| t.concat(&[v[0], v[1]], 1));
        check_op("narrow", &[a.clone()], TOL, |t, v| t.narrow(v[0], 1, 1, 2));
        check_op("reduce_sum", &[a.clone()], TOL, |t, v| t.reduce_sum(v[0], 0));
        check_op("reduce_mean", &[a.clone()], TOL, |t, v| t.reduce_mean(v[0], 1));
        check_op("matmul", &[a.clone(), n(&[4, 2])], TOL, |t, v| t.matmul(v[0], v[1]));
        check_op("batched matmul", &[n(&[2, 3, 4]), n(&[4, 2])], TOL, |t, v| t.matmul(v[0], v[1]));
        check_op("broadcast matmul", &[n(&[2, 3, 4]), n(&[1, 4, 2])], TOL, |t, v| t.matmul(v[0], v[1]));
        check_op("softmax", &[a.clone()], TOL, |t, v| t.softmax(v[0], -1));
        check_op("softmax axis 0", &[a.clone()], TOL, |t, v| t.softmax(v[0], 0));
        check_op("l2_normalize", &[a.clone()], TOL, |t, v| t.l2_normalize(v[0], -1, 1e-12));
        check_op("batch_norm train", &[a.clone(), row.clone(), n(&[4])], TOL, |t, v| {
            let mut state = NormState::new(4);
            t.batch_norm(v[0], v[1], v[2], &mut state, true)
        });
        check_op("batch_norm eval", &[a.clone(), row.clone(), n(&[4])], TOL, |t, v| {
            let mut state = NormState::new(4);
            state.running_mean = Tensor::vector(&[0.1, -0.2, 0.3, 0.0]);
            state.running_var = Tensor::vector(&[0.5, 2.0, 1.0, 3.0]);
            t.batch_norm(v[0], v[1], v[2], &mut state, false)
        });
        let probs = a.map(|v| 0.05 + 0.9 * poolforge_sigmoid(v));
        let targets = Tensor::new([3, 4], (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        let report = grad_check(
            |t, v| t.binary_cross_entropy(v[0], &targets, 1e-12),
            &[probs],
            GradCheckOptions::with_tolerance(TOL),
        )
        .unwrap();
        assert!(report.passed, "bce: {report:?}");
    }
}

fn poolforge_sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn softmax_cross_entropy_gradient() {
    for seed in 0..5 {
        let mut rng = random::rng(100 + seed);
        let logits = random::normal([4, 6], 2.0, &mut rng);
        let mut onehot = vec![0.0; 24];
        for r in 0..4 {
            onehot[r * 6 + (r * 5 + seed as usize) % 6] = 1.0;
        }
        let onehot = Tensor::new([4, 6], onehot).unwrap();
        let report = grad_check(
            |t, v| {
                let p = t.softmax(v[0], -1)?;
                let lp = t.ln(p)?;
                let y = t.constant(onehot.clone());
                let picked = t.mul(lp, y)?;
                let total = t.sum(picked)?;
                t.scale(total, -0.25)
            },
            &[logits],
            GradCheckOptions::with_tolerance(1e-6),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn composite_chain_matches_finite_differences() {
    let mut rng = random::rng(11);
    let x = random::normal([2, 5, 4], 1.0, &mut rng);
    let w = random::normal([4, 3], 0.5, &mut rng);
    let report = grad_check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let s = t.softmax(h, 1)?;
            let st = t.transpose(s)?;
            let agg = t.matmul(st, v[0])?;
            let n = t.l2_normalize(agg, -1, 1e-12)?;
            let g = t.sigmoid(n)?;
            weighted_sum(t, g, 5)
        },
        &[x, w],
        GradCheckOptions::with_tolerance(1e-4),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn gradients_have_forward_shapes() {
    let mut rng = random::rng(2);
    let mut tape = Tape::new();
    let x = tape.leaf(random::normal([2, 3, 4], 1.0, &mut rng));
    let w = tape.leaf(random::normal([4, 5], 1.0, &mut rng));
    let b = tape.leaf(random::normal([5], 1.0, &mut rng));
    let y = tape.linear(x, w, b).unwrap();
    let y = tape.relu(y).unwrap();
    let loss = tape.sum(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    for v in [x, w, b] {
        assert_eq!(grads.get(v).unwrap().dims(), tape.value(v).dims());
    }
}
