use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Ln(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    ReduceSum(Var, usize),
    SumAll(Var),
    Matmul(Var, Var),
    Softmax(Var, usize),
    L2Normalize {
        x: Var,
        axis: usize,
        eps: f64,
        norms: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
        training: bool,
    },
    BinaryCrossEntropy {
        probs: Var,
        targets: Tensor,
        eps: f64,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Every node's inputs precede it, so a single reverse sweep in
/// [`Tape::backward`] visits nodes in reverse topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    named: BTreeMap<String, Var>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if the loss
    /// does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros of the right shape.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape().clone()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.dims()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Registers `var` under a parameter path so layers can look it up.
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.named.insert(name.into(), var);
    }

    /// Creates a leaf for `value` and binds it to `name`.
    pub fn bind_leaf(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let var = self.leaf(value);
        self.bind(name, var);
        var
    }

    /// Looks up a bound parameter.
    pub fn param(&self, name: &str) -> Result<Var> {
        self.named
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter {name:?} is not bound")))
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.named.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let value = kernels::broadcast_binary(name, self.value(a), self.value(b), f)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push("scale", value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + shift);
        self.push("add_scalar", value, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::numeric("sqrt of negative value"));
        }
        let value = self.value(x).map(f64::sqrt);
        self.push("sqrt", value, Op::Sqrt(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::numeric("ln of non-positive value"));
        }
        let value = self.value(x).map(f64::ln);
        self.push("ln", value, Op::Ln(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Flattens everything after the leading axis.
    pub fn flatten_rows(&mut self, x: Var) -> Result<Var> {
        let dims = self.shape(x);
        let rows = dims[0];
        let cols = dims[1..].iter().product::<usize>();
        self.reshape(x, [rows, cols])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = kernels::permute(self.value(x), axes)?;
        self.push("permute", value, Op::Permute(x, axes.to_vec()), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::contract("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: isize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let axis = self.value(*first).shape().axis(axis)?;
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = kernels::concat(&values, axis)?;
        self.push("concat", value, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn narrow(&mut self, x: Var, axis: isize, start: usize, len: usize) -> Result<Var> {
        let axis = self.value(x).shape().axis(axis)?;
        let value = kernels::narrow(self.value(x), axis, start, len)?;
        self.push("narrow", value, Op::Narrow(x, axis, start), &[x])
    }

    /// Sum over `axis`, removing it.
    pub fn reduce_sum(&mut self, x: Var, axis: isize) -> Result<Var> {
        let axis = self.value(x).shape().axis(axis)?;
        let value = kernels::reduce_sum(self.value(x), axis);
        self.push("reduce_sum", value, Op::ReduceSum(x, axis), &[x])
    }

    /// Mean over `axis`, removing it.
    pub fn reduce_mean(&mut self, x: Var, axis: isize) -> Result<Var> {
        let resolved = self.value(x).shape().axis(axis)?;
        let len = self.value(x).dims()[resolved];
        let summed = self.reduce_sum(x, axis)?;
        self.scale(summed, 1.0 / len as f64)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::SumAll(x), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        self.push("matmul", value, Op::Matmul(a, b), &[a, b])
    }

    /// `x . w + bias` with `bias` broadcast over rows.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add(xw, bias)
    }

    pub fn softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let axis = self.value(x).shape().axis(axis)?;
        let value = kernels::softmax(self.value(x), axis)?;
        self.push("softmax", value, Op::Softmax(x, axis), &[x])
    }

    /// `x / max(||x||_2, eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: isize, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract("l2_normalize requires eps > 0"));
        }
        let axis = self.value(x).shape().axis(axis)?;
        let (value, norms) = kernels::l2_normalize(self.value(x), axis, eps);
        self.push(
            "l2_normalize",
            value,
            Op::L2Normalize { x, axis, eps, norms },
            &[x],
        )
    }

    /// Mean over rows of the summed per-label binary cross-entropy.
    ///
    /// `probs` is `[rows, labels]` in `[0, 1]`; `targets` holds 0/1 values.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &Tensor, eps: f64) -> Result<Var> {
        let p = self.value(probs);
        if p.dims() != targets.dims() || p.rank() == 0 {
            return Err(Error::shape("binary_cross_entropy", p.dims(), targets.dims()));
        }
        let rows = p.dims()[0] as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| -(y * (p + eps).ln() + (1.0 - y) * (1.0 - p + eps).ln()))
            .sum();
        let op = Op::BinaryCrossEntropy {
            probs,
            targets: targets.clone(),
            eps,
        };
        self.push("binary_cross_entropy", Tensor::scalar(total / rows), op, &[probs])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape().clone()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, contribution: Tensor| {
            if self.needs(v) {
                accumulate(&mut grads[v.0], contribution);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, kernels::sum_to_shape(g, self.shape(*a)));
                send(*b, kernels::sum_to_shape(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                send(*a, kernels::sum_to_shape(g, self.shape(*a)));
                send(*b, kernels::sum_to_shape(&g.map(|v| -v), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let ga = kernels::broadcast_binary("mul", g, self.value(*b), |x, y| x * y)?;
                    send(*a, kernels::sum_to_shape(&ga, self.shape(*a)));
                }
                if self.needs(*b) {
                    let gb = kernels::broadcast_binary("mul", g, self.value(*a), |x, y| x * y)?;
                    send(*b, kernels::sum_to_shape(&gb, self.shape(*b)));
                }
            }
            Op::Scale(x, factor) => send(*x, g.map(|v| v * factor)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::Relu(x) => {
                let gx = zip_map(g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 });
                send(*x, gx);
            }
            Op::Sigmoid(x) => send(*x, zip_map(g, out, |g, y| g * y * (1.0 - y))),
            Op::Tanh(x) => send(*x, zip_map(g, out, |g, y| g * (1.0 - y * y))),
            Op::Sqrt(x) => send(*x, zip_map(g, out, |g, y| g / (2.0 * y))),
            Op::Ln(x) => send(*x, zip_map(g, self.value(*x), |g, x| g / x)),
            Op::Reshape(x) => send(*x, g.reshape(self.value(*x).shape().clone())?),
            Op::Permute(x, axes) => {
                send(*x, kernels::permute(g, &kernels::inverse_permutation(axes))?)
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    send(p, kernels::narrow(g, *axis, start, len)?);
                    start += len;
                }
            }
            Op::Narrow(x, axis, start) => {
                send(*x, kernels::narrow_backward(self.shape(*x), g, *axis, *start))
            }
            Op::ReduceSum(x, axis) => {
                let len = self.shape(*x)[*axis];
                send(*x, kernels::expand_axis(g, *axis, len));
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                send(*x, Tensor::full(self.value(*x).shape().clone(), gv));
            }
            Op::Matmul(a, b) => {
                let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), g)?;
                send(*a, ga);
                send(*b, gb);
            }
            Op::Softmax(x, axis) => send(*x, kernels::softmax_backward(out, g, *axis)),
            Op::L2Normalize { x, axis, eps, norms } => {
                send(*x, kernels::l2_normalize_backward(out, norms, g, *axis, *eps))
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                training,
            } => {
                let (gx, ggamma, gbeta) =
                    super::norm::batch_norm_backward(self.value(*gamma), normalized, inv_std, *training, g);
                send(*x, gx);
                send(*gamma, ggamma);
                send(*beta, gbeta);
            }
            Op::BinaryCrossEntropy { probs, targets, eps } => {
                let p = self.value(*probs);
                let rows = p.dims()[0] as f64;
                let scale = g.data()[0] / rows;
                let gp = zip_map(p, targets, |p, y| {
                    scale * (-(y / (p + eps)) + (1.0 - y) / (1.0 - p + eps))
                });
                send(*probs, gp);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().clone(), data)
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        None => *slot = Some(contribution),
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += c;
            }
        }
    }
}
