//! Forward and adjoint kernels shared by the tape.
//!
//! Everything here is sequential and deterministic: the same inputs produce
//! bit-identical outputs on every call.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Iterates the flat offsets of a strided view in row-major order of `dims`.
pub(crate) struct StridedOffsets<'a> {
    dims: &'a [usize],
    strides: Vec<usize>,
    index: Vec<usize>,
    offset: usize,
    remaining: usize,
}

impl<'a> StridedOffsets<'a> {
    pub(crate) fn new(dims: &'a [usize], strides: Vec<usize>) -> Self {
        debug_assert_eq!(dims.len(), strides.len());
        StridedOffsets {
            dims,
            strides,
            index: vec![0; dims.len()],
            offset: 0,
            remaining: dims.iter().product(),
        }
    }
}

impl Iterator for StridedOffsets<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let current = self.offset;
        self.remaining -= 1;
        for axis in (0..self.dims.len()).rev() {
            self.index[axis] += 1;
            self.offset += self.strides[axis];
            if self.index[axis] < self.dims[axis] {
                break;
            }
            self.offset -= self.strides[axis] * self.dims[axis];
            self.index[axis] = 0;
        }
        Some(current)
    }
}

/// Numpy-style broadcast of two shapes, aligned on trailing dimensions.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides that read `dims` as if broadcast to `out` (zero on broadcast axes).
fn broadcast_strides(dims: &[usize], out: &[usize]) -> Vec<usize> {
    let own = Shape::new(dims.to_vec()).strides();
    let lead = out.len() - dims.len();
    (0..out.len())
        .map(|i| {
            if i < lead || (dims[i - lead] == 1 && out[i] != 1) {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Elementwise binary op with broadcasting.
pub fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.dims() == b.dims() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().clone(), data));
    }
    let out = broadcast_shape(op, a.dims(), b.dims())?;
    let (ad, bd) = (a.data(), b.data());
    // b broadcast along the leading axes only (bias-style): cycle through it.
    if out == a.dims() && a.dims().ends_with(b.dims()) {
        let data = ad
            .iter()
            .zip(bd.iter().cycle())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::from_parts(Shape::new(out), data));
    }
    let sa = StridedOffsets::new(&out, broadcast_strides(a.dims(), &out));
    let sb = StridedOffsets::new(&out, broadcast_strides(b.dims(), &out));
    let data = sa.zip(sb).map(|(i, j)| f(ad[i], bd[j])).collect();
    Ok(Tensor::from_parts(Shape::new(out), data))
}

/// Sums `grad` down to `target`, undoing a broadcast.
pub fn sum_to_shape(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.dims() == target {
        return grad.clone();
    }
    let out = grad.dims();
    let mut acc = vec![0.0; target.iter().product()];
    if out.ends_with(target) {
        let width = acc.len();
        for chunk in grad.data().chunks(width) {
            for (a, g) in acc.iter_mut().zip(chunk) {
                *a += g;
            }
        }
    } else {
        let offsets = StridedOffsets::new(out, broadcast_strides(target, out));
        for (g, j) in grad.data().iter().zip(offsets) {
            acc[j] += g;
        }
    }
    Tensor::from_parts(Shape::new(target.to_vec()), acc)
}

/// Reads `x` broadcast to `out` as a materialized tensor.
pub fn broadcast_to(x: &Tensor, out: &[usize]) -> Result<Tensor> {
    let shape = broadcast_shape("broadcast_to", x.dims(), out)?;
    if shape != out {
        return Err(Error::shape("broadcast_to", x.dims(), out));
    }
    let data = StridedOffsets::new(out, broadcast_strides(x.dims(), out))
        .map(|i| x.data()[i])
        .collect();
    Ok(Tensor::from_parts(Shape::new(out.to_vec()), data))
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    // Bounds for the strided reads and the dense row-major write.
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    batch: Vec<usize>,
    a_batch_strides: Vec<usize>,
    b_batch_strides: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", a, b));
        }
        let a_prefix = &a[..a.len() - 2];
        let b_prefix = &b[..b.len() - 2];
        let batch = broadcast_shape("matmul", a_prefix, b_prefix).map_err(|_| Error::shape("matmul", a, b))?;
        let scale = |strides: Vec<usize>, block: usize| -> Vec<usize> {
            strides.into_iter().map(|s| s * block).collect()
        };
        Ok(MatmulPlan {
            m,
            k,
            n,
            a_batch_strides: scale(broadcast_strides(a_prefix, &batch), m * k),
            b_batch_strides: scale(broadcast_strides(b_prefix, &batch), k * n),
            batch,
        })
    }

    fn out_dims(&self) -> Vec<usize> {
        let mut dims = self.batch.clone();
        dims.extend([self.m, self.n]);
        dims
    }

    /// (a offset, b offset) per output batch entry.
    fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        StridedOffsets::new(&self.batch, self.a_batch_strides.clone())
            .zip(StridedOffsets::new(&self.batch, self.b_batch_strides.clone()))
    }
}

/// Batched matrix product `[.., M, K] x [.., K, N] -> [.., M, N]` with
/// broadcast batch prefixes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let plan = MatmulPlan::new(a.dims(), b.dims())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let out_dims = plan.out_dims();
    let mut out = vec![0.0; out_dims.iter().product()];
    if b.rank() == 2 {
        // Fold every batch row of `a` into one product.
        let rows = a.len() / k;
        gemm(rows, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out, false);
    } else {
        for (bi, (ao, bo)) in plan.offsets().enumerate() {
            gemm(
                m,
                k,
                n,
                &a.data()[ao..ao + m * k],
                (k, 1),
                &b.data()[bo..bo + k * n],
                (n, 1),
                &mut out[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
    }
    Ok(Tensor::from_parts(Shape::new(out_dims), out))
}

/// Adjoints of [`matmul`] for upstream gradient `g`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let plan = MatmulPlan::new(a.dims(), b.dims())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    if b.rank() == 2 {
        let rows = a.len() / k;
        // ga = g . b^T
        gemm(rows, n, k, g.data(), (n, 1), b.data(), (1, n), &mut ga, false);
        // gb = a^T . g
        gemm(k, rows, n, a.data(), (1, k), g.data(), (n, 1), &mut gb, false);
    } else {
        for (bi, (ao, bo)) in plan.offsets().enumerate() {
            let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
            gemm(
                m,
                n,
                k,
                gs,
                (n, 1),
                &b.data()[bo..bo + k * n],
                (1, n),
                &mut ga[ao..ao + m * k],
                true,
            );
            gemm(
                k,
                m,
                n,
                &a.data()[ao..ao + m * k],
                (1, k),
                gs,
                (n, 1),
                &mut gb[bo..bo + k * n],
                true,
            );
        }
    }
    Ok((
        Tensor::from_parts(a.shape().clone(), ga),
        Tensor::from_parts(b.shape().clone(), gb),
    ))
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::contract(format!(
            "invalid permutation {axes:?} for rank {rank}"
        )));
    }
    let in_strides = x.shape().strides();
    let out_dims: Vec<usize> = axes.iter().map(|&a| x.dims()[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let data = StridedOffsets::new(&out_dims, strides)
        .map(|i| x.data()[i])
        .collect();
    Ok(Tensor::from_parts(Shape::new(out_dims), data))
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits dims around `axis` into (outer, len, inner).
pub(crate) fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::numeric("softmax input"));
    }
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|j| src[base + j * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * inner] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().clone(), out))
}

/// Adjoint of softmax given its output `y`.
pub fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.dims(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len)
                .map(|j| yd[base + j * inner] * gd[base + j * inner])
                .sum();
            for j in 0..len {
                let idx = base + j * inner;
                out[idx] = yd[idx] * (gd[idx] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().clone(), out)
}

/// `x / max(||x||_2, eps)` along `axis`. Returns the output and the clamped
/// norm per lane (needed by the adjoint).
pub fn l2_normalize(x: &Tensor, axis: usize, eps: f64) -> (Tensor, Vec<f64>) {
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let src = x.data();
    let mut out = vec![0.0; x.len()];
    let mut norms = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let norm = (0..len)
                .map(|j| src[base + j * inner].powi(2))
                .sum::<f64>()
                .sqrt()
                .max(eps);
            for j in 0..len {
                out[base + j * inner] = src[base + j * inner] / norm;
            }
            norms.push(norm);
        }
    }
    (Tensor::from_parts(x.shape().clone(), out), norms)
}

pub fn l2_normalize_backward(y: &Tensor, norms: &[f64], g: &Tensor, axis: usize, eps: f64) -> Tensor {
    let (outer, len, inner) = axis_split(y.dims(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let norm = norms[o * inner + i];
            // Below eps the map is linear: x / eps.
            let dot: f64 = if norm > eps {
                (0..len)
                    .map(|j| yd[base + j * inner] * gd[base + j * inner])
                    .sum()
            } else {
                0.0
            };
            for j in 0..len {
                let idx = base + j * inner;
                out[idx] = (gd[idx] - yd[idx] * dot) / norm;
            }
        }
    }
    Tensor::from_parts(y.shape().clone(), out)
}

/// Sum over `axis`, removing it.
pub fn reduce_sum(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let src = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
            for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    let mut dims = x.dims().to_vec();
    dims.remove(axis);
    Tensor::from_parts(Shape::new(dims), out)
}

/// Repeats `g` (with `axis` removed) `len` times along `axis`.
pub fn expand_axis(g: &Tensor, axis: usize, len: usize) -> Tensor {
    let mut dims = g.dims().to_vec();
    dims.insert(axis, len);
    let (outer, _, inner) = axis_split(&dims, axis);
    let src = g.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        for _ in 0..len {
            out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
        }
    }
    Tensor::from_parts(Shape::new(dims), out)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::contract(format!("concat axis {axis} for rank {rank}")));
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = 0;
    for p in parts {
        let same_rest = p.rank() == rank
            && (0..rank).all(|i| i == axis || p.dims()[i] == first.dims()[i]);
        if !same_rest {
            return Err(Error::shape("concat", first.dims(), p.dims()));
        }
        dims[axis] += p.dims()[axis];
    }
    let (outer, _, inner) = axis_split(&dims, axis);
    let mut out = Vec::with_capacity(dims.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(Shape::new(dims), out))
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let extent = x.dims()[axis];
    if len == 0 || start + len > extent {
        return Err(Error::contract(format!(
            "narrow [{start}, {}) out of extent {extent}",
            start + len
        )));
    }
    let (outer, _, inner) = axis_split(x.dims(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut dims = x.dims().to_vec();
    dims[axis] = len;
    Ok(Tensor::from_parts(Shape::new(dims), out))
}

/// Adjoint of [`narrow`]: embeds `g` into zeros of the source shape.
pub fn narrow_backward(src_dims: &[usize], g: &Tensor, axis: usize, start: usize) -> Tensor {
    let extent = src_dims[axis];
    let len = g.dims()[axis];
    let (outer, _, inner) = axis_split(src_dims, axis);
    let mut out = vec![0.0; src_dims.iter().product()];
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out[base..base + len * inner]
            .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(Shape::new(src_dims.to_vec()), out)
}
