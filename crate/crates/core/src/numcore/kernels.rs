//! Plain tensor kernels. The tape wraps these with gradient bookkeeping; they
//! are also usable directly when no differentiation is wanted.

use super::tensor::numel;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// How a (possibly batched) matrix product lines up its operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

impl MatmulPlan {
    pub fn macs(&self) -> u64 {
        (self.batch * self.m * self.p * self.n) as u64
    }
}

/// Leading dimensions must either agree exactly, or one side must be a plain
/// matrix that is reused across every batch entry of the other.
pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<(MatmulPlan, Vec<usize>)> {
    let err = || Error::Dimension {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, p) = (a[a.len() - 2], a[a.len() - 1]);
    let (p2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if p != p2 {
        return Err(err());
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let lead = match (a_lead.is_empty(), b_lead.is_empty()) {
        (_, true) => a_lead.to_vec(),
        (true, false) => b_lead.to_vec(),
        (false, false) if a_lead == b_lead => a_lead.to_vec(),
        _ => return Err(err()),
    };
    let mut out = lead.clone();
    out.extend([m, n]);
    let plan = MatmulPlan {
        batch: numel(&lead),
        m,
        p,
        n,
        a_batched: !a_lead.is_empty(),
        b_batched: !b_lead.is_empty(),
    };
    Ok((plan, out))
}

/// `out[m×n] += a[m×p] · b[p×n]`, row-major, fixed accumulation order.
#[inline]
pub(crate) fn gemm_acc<T: Real>(m: usize, p: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

pub(crate) fn matmul_with_plan<T: Real>(plan: &MatmulPlan, a: &[T], b: &[T]) -> Vec<T> {
    let MatmulPlan { batch, m, p, n, .. } = *plan;
    let mut out = vec![T::zero(); batch * m * n];
    if !plan.b_batched {
        // a's batch folds into its rows
        gemm_acc(batch * m, p, n, a, b, &mut out);
        return out;
    }
    for bi in 0..batch {
        let asl = if plan.a_batched {
            &a[bi * m * p..(bi + 1) * m * p]
        } else {
            a
        };
        let bsl = &b[bi * p * n..(bi + 1) * p * n];
        gemm_acc(m, p, n, asl, bsl, &mut out[bi * m * n..(bi + 1) * m * n]);
    }
    out
}

/// Matrix product over the last two dimensions with batch broadcasting.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (plan, shape) = matmul_plan(a.shape(), b.shape())?;
    Ok(Tensor::from_parts(shape, matmul_with_plan(&plan, a.data(), b.data())))
}

pub(crate) fn permute_shape(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut seen = vec![false; shape.len()];
    if axes.len() != shape.len()
        || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
    {
        return Err(Error::shape("permute", format!("axes {axes:?} for shape {shape:?}")));
    }
    Ok(axes.iter().map(|&a| shape[a]).collect())
}

/// Reorders dimensions: output dimension `i` is input dimension `axes[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let out_shape = permute_shape(x.shape(), axes)?;
    let rank = axes.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * x.shape()[d + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = x.data();
    let mut data = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..src.len() {
        data.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Swaps the last two dimensions.
pub fn transpose<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::shape("transpose", format!("rank {r} < 2")));
    }
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    permute(x, &axes)
}

/// Softmax over the last dimension, computed with max subtraction.
pub fn softmax_lastdim<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if d == 0 {
        return Err(Error::shape("softmax_lastdim", "empty last dimension"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Normalised input and per-row reciprocal standard deviation, kept for backward.
pub(crate) struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_cached<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gamma.numel() != d || beta.numel() != d || gamma.rank() != 1 || beta.rank() != 1 {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::shape("layer_norm", format!("eps must be positive, got {eps}")));
    }
    let eps = T::of(eps);
    let inv_d = T::of(1.0 / d as f64);
    let rows = x.numel() / d;
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(rows);
    let (g, b) = (gamma.data(), beta.data());
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let is = (var + eps).sqrt().recip();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormCache { xhat, inv_std },
    ))
}

/// Per-row `((x - mean) / sqrt(var + eps)) * gamma + beta` with the biased variance.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}
