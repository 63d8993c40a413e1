//! Append-only operation tape for reverse-mode differentiation.
//!
//! Every differentiable primitive is a method on [`Tape`]. Values are held in
//! [`Var`] handles; a `Var` carries a node id only when the tape is enabled and
//! at least one of its inputs is itself on the tape. With the tape disabled no
//! nodes are recorded and intermediates are freed as soon as their handles drop,
//! but the forward arithmetic is the same code path.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::kernels::{self, LayerNormCache, MatmulPlan};
use super::tensor::numel;
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Counts multiply-accumulates of recorded matrix products.
#[derive(Debug, Default)]
pub struct MacCounter {
    macs: Cell<u64>,
    enabled: Cell<bool>,
}

impl MacCounter {
    pub fn new(enabled: bool) -> Self {
        MacCounter {
            macs: Cell::new(0),
            enabled: Cell::new(enabled),
        }
    }

    pub fn record(&self, macs: u64) {
        if self.enabled.get() {
            self.macs.set(self.macs.get() + macs);
        }
    }

    pub fn total(&self) -> u64 {
        self.macs.get()
    }

    pub fn reset(&self) {
        self.macs.set(0);
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.get()
    }

    pub fn set_enabled(&self, enabled: bool) {
        self.enabled.set(enabled);
    }
}

/// Handle to a value produced under a [`Tape`].
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn node(&self) -> Option<usize> {
        self.node
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|a| (*a).clone())
    }
}

enum Op<T> {
    Leaf { param: usize, name: String },
    MatMul(MatmulPlan),
    Permute(Vec<usize>),
    Reshape,
    Add,
    AddBroadcast,
    Mul,
    Scale(T),
    Relu,
    Softmax,
    LayerNorm(LayerNormCache<T>),
    Concat { dim: usize },
    Narrow { dim: usize, start: usize },
    Embedding { ids: Vec<usize> },
    Sum,
    Mean,
    CrossEntropy { labels: Vec<usize>, probs: Vec<T> },
    MaskedFill { mask: Arc<Vec<bool>> },
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var<T>>,
    output: Arc<Tensor<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    enabled: bool,
    macs: MacCounter,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn outer_inner(shape: &[usize], dim: usize) -> (usize, usize) {
    (numel(&shape[..dim]), numel(&shape[dim + 1..]))
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl<T: Real> Tape<T> {
    /// Recording tape with the MAC counter off.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
            macs: MacCounter::new(false),
        }
    }

    /// Forward-only evaluation: nothing is recorded.
    pub fn disabled() -> Self {
        Tape {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn with_mac_counter(self) -> Self {
        self.macs.set_enabled(true);
        self
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn macs(&self) -> &MacCounter {
        &self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, op_name: &'static str, op: Op<T>, inputs: Vec<Var<T>>, out: Tensor<T>) -> Result<Var<T>> {
        if !out.is_finite() {
            return Err(Error::NonFinite(op_name));
        }
        let value = Arc::new(out);
        if !self.enabled || inputs.iter().all(|v| v.node.is_none()) {
            return Ok(Var { value, node: None });
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            output: Arc::clone(&value),
        });
        Ok(Var { value, node: Some(id) })
    }

    /// A value that receives no gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<T> {
        Var {
            value: Arc::new(t),
            node: None,
        }
    }

    /// Reads a parameter; on an enabled tape it becomes a gradient leaf.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var<T>> {
        let idx = store.index_of(name)?;
        let value = store.value_arc(idx);
        if !self.enabled {
            return Ok(Var { value, node: None });
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: Op::Leaf {
                param: idx,
                name: name.to_string(),
            },
            inputs: Vec::new(),
            output: Arc::clone(&value),
        });
        Ok(Var { value, node: Some(id) })
    }

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (plan, shape) = kernels::matmul_plan(a.shape(), b.shape())?;
        self.macs.record(plan.macs());
        let data = kernels::matmul_with_plan(&plan, a.value.data(), b.value.data());
        self.record(
            "matmul",
            Op::MatMul(plan),
            vec![a.clone(), b.clone()],
            Tensor::from_parts(shape, data),
        )
    }

    pub fn permute(&self, x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
        let out = kernels::permute(&x.value, axes)?;
        self.record("permute", Op::Permute(axes.to_vec()), vec![x.clone()], out)
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self, x: &Var<T>) -> Result<Var<T>> {
        let r = x.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = x.value.reshape(shape.to_vec())?;
        self.record("reshape", Op::Reshape, vec![x.clone()], out)
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = (*a.value).clone();
        out.add_assign(&b.value);
        self.record("add", Op::Add, vec![a.clone(), b.clone()], out)
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias or positional add).
    pub fn add_broadcast(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Dimension {
                op: "add_broadcast",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut out = (*a.value).clone();
        let bd = b.value.data();
        for chunk in out.data_mut().chunks_mut(bd.len()) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        self.record("add_broadcast", Op::AddBroadcast, vec![a.clone(), b.clone()], out)
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.value.data().iter().zip(b.value.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        self.record("mul", Op::Mul, vec![a.clone(), b.clone()], out)
    }

    pub fn scale(&self, x: &Var<T>, s: f64) -> Result<Var<T>> {
        let s = T::of(s);
        let out = x.value.map(|v| v * s);
        self.record("scale", Op::Scale(s), vec![x.clone()], out)
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::relu(&x.value);
        self.record("relu", Op::Relu, vec![x.clone()], out)
    }

    pub fn softmax(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::softmax_lastdim(&x.value)?;
        self.record("softmax", Op::Softmax, vec![x.clone()], out)
    }

    pub fn layer_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
        let (out, cache) = kernels::layer_norm_cached(&x.value, &gamma.value, &beta.value, eps)?;
        self.record(
            "layer_norm",
            Op::LayerNorm(cache),
            vec![x.clone(), gamma.clone(), beta.clone()],
            out,
        )
    }

    /// Concatenates along `dim`; all other dimensions must agree.
    pub fn concat(&self, xs: &[Var<T>], dim: usize) -> Result<Var<T>> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.shape();
        if dim >= base.len() {
            return Err(Error::shape("concat", format!("dim {dim} for rank {}", base.len())));
        }
        let mut total = 0;
        for x in xs {
            let s = x.shape();
            if s.len() != base.len() || s.iter().zip(base).enumerate().any(|(i, (a, b))| i != dim && a != b) {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total += s[dim];
        }
        let mut shape = base.to_vec();
        shape[dim] = total;
        let (outer, inner) = outer_inner(base, dim);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for x in xs {
                let chunk = x.shape()[dim] * inner;
                data.extend_from_slice(&x.value.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.record("concat", Op::Concat { dim }, xs.to_vec(), Tensor::from_parts(shape, data))
    }

    /// Slice `start..start + len` along `dim`.
    pub fn narrow(&self, x: &Var<T>, dim: usize, start: usize, len: usize) -> Result<Var<T>> {
        let s = x.shape();
        if dim >= s.len() || len == 0 || start + len > s[dim] {
            return Err(Error::shape(
                "narrow",
                format!("{start}..{} along dim {dim} of {s:?}", start + len),
            ));
        }
        let (outer, inner) = outer_inner(s, dim);
        let mut shape = s.to_vec();
        shape[dim] = len;
        let mut data = Vec::with_capacity(numel(&shape));
        let src = x.value.data();
        for o in 0..outer {
            let base = o * s[dim] * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        self.record("narrow", Op::Narrow { dim, start }, vec![x.clone()], Tensor::from_parts(shape, data))
    }

    /// Row lookup: `table[ids[i]]` for each id; output `[ids.len(), d]`.
    pub fn embedding(&self, table: &Var<T>, ids: &[usize]) -> Result<Var<T>> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(Error::shape("embedding", format!("table must be 2-D, got {s:?}")));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let (rows, d) = (s[0], s[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::shape("embedding", format!("id {id} out of range for {rows} rows")));
            }
            data.extend_from_slice(&table.value.data()[id * d..(id + 1) * d]);
        }
        self.record(
            "embedding",
            Op::Embedding { ids: ids.to_vec() },
            vec![table.clone()],
            Tensor::from_parts(vec![ids.len(), d], data),
        )
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        self.record("sum", Op::Sum, vec![x.clone()], Tensor::scalar(x.value.sum()))
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        let m = x.value.sum() / T::of(x.value.numel() as f64);
        self.record("mean", Op::Mean, vec![x.clone()], Tensor::scalar(m))
    }

    /// Mean cross-entropy of `[batch, classes]` logits against integer labels.
    pub fn cross_entropy(&self, logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape("cross_entropy", format!("label {bad} >= {c} classes")));
        }
        let probs = kernels::softmax_lastdim(&logits.value)?.into_data();
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let row = &logits.value.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[l];
        }
        loss /= T::of(labels.len() as f64);
        self.record(
            "cross_entropy",
            Op::CrossEntropy {
                labels: labels.to_vec(),
                probs,
            },
            vec![logits.clone()],
            Tensor::scalar(loss),
        )
    }

    /// Sets entries where `mask` is true to `value`. `mask_shape` must be a
    /// suffix of `x`'s shape; the mask repeats over the leading dimensions.
    pub fn masked_fill(&self, x: &Var<T>, mask: Arc<Vec<bool>>, mask_shape: &[usize], value: f64) -> Result<Var<T>> {
        let s = x.shape();
        if mask_shape.len() > s.len() || s[s.len() - mask_shape.len()..] != *mask_shape || numel(mask_shape) != mask.len() {
            return Err(Error::Dimension {
                op: "masked_fill",
                lhs: s.to_vec(),
                rhs: mask_shape.to_vec(),
            });
        }
        let v = T::of(value);
        let mut out = (*x.value).clone();
        for chunk in out.data_mut().chunks_mut(mask.len()) {
            for (o, &m) in chunk.iter_mut().zip(mask.iter()) {
                if m {
                    *o = v;
                }
            }
        }
        self.record("masked_fill", Op::MaskedFill { mask }, vec![x.clone()], out)
    }

    /// Node ids in the order backward visits them, ending at node 0.
    fn backward_into(&self, loss: &Var<T>, params: &mut ParamStore<T>, trace: &mut Vec<usize>) -> Result<()> {
        let root = loss
            .node
            .ok_or_else(|| Error::Backward("loss is not recorded on this tape".into()))?;
        if loss.value.numel() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", loss.shape())));
        }
        let nodes = self.nodes.borrow();
        if root >= nodes.len() || !Arc::ptr_eq(&nodes[root].output, &loss.value) {
            return Err(Error::Backward("loss is not recorded on this tape".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape().to_vec(), T::one()));
        for id in (0..=root).rev() {
            trace.push(id);
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf { param, name } = &node.op {
                if *param >= params.len() || params.param_at(*param).0 != name {
                    return Err(Error::Backward(format!("parameter `{name}` is not in the supplied store")));
                }
                params.param_at_mut(*param).1.grad.add_assign(&g);
                continue;
            }
            let input_grads = node_backward(node, &g)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(nid), Some(ig)) = (input.node, ig) {
                    match &mut grads[nid] {
                        Some(acc) => acc.add_assign(&ig),
                        slot => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Accumulates `d loss / d param` into every parameter's gradient slot.
/// Slots are not cleared first; call [`ParamStore::zero_grad`] between steps.
pub fn backward<T: Real>(tape: &Tape<T>, loss: &Var<T>, params: &mut ParamStore<T>) -> Result<()> {
    let mut trace = Vec::new();
    tape.backward_into(loss, params, &mut trace)
}

/// `out[m×p] += g[m×n] · b[p×n]ᵀ`
fn gemm_nt<T: Real>(m: usize, n: usize, p: usize, g: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for k in 0..p {
            let brow = &b[k * n..(k + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * p + k] += acc;
        }
    }
}

/// `out[p×n] += a[m×p]ᵀ · g[m×n]`
fn gemm_tn<T: Real>(m: usize, p: usize, n: usize, a: &[T], g: &[T], out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a[i * p + k];
            let orow = &mut out[k * n..(k + 1) * n];
            for (o, &x) in orow.iter_mut().zip(grow) {
                *o += aik * x;
            }
        }
    }
}

fn same_shape<T: Real>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::from_parts(like.shape().to_vec(), data)
}

fn node_backward<T: Real>(node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
    let x = |i: usize| node.inputs[i].value.as_ref();
    let gd = g.data();
    Ok(match &node.op {
        Op::Leaf { .. } => Vec::new(),
        Op::MatMul(plan) => {
            let MatmulPlan { batch, m, p, n, .. } = *plan;
            let (a, b) = (x(0), x(1));
            let mut da = vec![T::zero(); a.numel()];
            let mut db = vec![T::zero(); b.numel()];
            if !plan.b_batched {
                gemm_nt(batch * m, n, p, gd, b.data(), &mut da);
                gemm_tn(batch * m, p, n, a.data(), gd, &mut db);
            } else {
                for bi in 0..batch {
                    let gs = &gd[bi * m * n..(bi + 1) * m * n];
                    let bs = &b.data()[bi * p * n..(bi + 1) * p * n];
                    let (ar, asl) = if plan.a_batched {
                        (bi * m * p..(bi + 1) * m * p, &a.data()[bi * m * p..(bi + 1) * m * p])
                    } else {
                        (0..m * p, a.data())
                    };
                    gemm_nt(m, n, p, gs, bs, &mut da[ar]);
                    gemm_tn(m, p, n, asl, gs, &mut db[bi * p * n..(bi + 1) * p * n]);
                }
            }
            vec![Some(same_shape(a, da)), Some(same_shape(b, db))]
        }
        Op::Permute(axes) => vec![Some(kernels::permute(g, &inverse_axes(axes))?)],
        Op::Reshape => vec![Some(g.reshape(x(0).shape().to_vec())?)],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::AddBroadcast => {
            let b = x(1);
            let mut db = vec![T::zero(); b.numel()];
            for chunk in gd.chunks(b.numel()) {
                for (o, &v) in db.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
            vec![Some(g.clone()), Some(same_shape(b, db))]
        }
        Op::Mul => {
            let (a, b) = (x(0), x(1));
            let da = gd.iter().zip(b.data()).map(|(&g, &v)| g * v).collect();
            let db = gd.iter().zip(a.data()).map(|(&g, &v)| g * v).collect();
            vec![Some(same_shape(a, da)), Some(same_shape(b, db))]
        }
        Op::Scale(s) => vec![Some(g.map(|v| v * *s))],
        Op::Relu => {
            let d = gd
                .iter()
                .zip(x(0).data())
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect();
            vec![Some(same_shape(g, d))]
        }
        Op::Softmax => {
            let y = node.output.data();
            let d = g.last_dim();
            let mut dx = vec![T::zero(); y.len()];
            for ((yr, gr), dr) in y.chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(same_shape(g, dx))]
        }
        Op::LayerNorm(cache) => {
            let gamma = x(1).data();
            let d = gamma.len();
            let inv_d = T::of(1.0 / d as f64);
            let mut dx = vec![T::zero(); gd.len()];
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            for (r, (gr, hr)) in gd.chunks(d).zip(cache.xhat.chunks(d)).enumerate() {
                let mut sum_dh = T::zero();
                let mut sum_dh_h = T::zero();
                for j in 0..d {
                    let dh = gr[j] * gamma[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                    dgamma[j] += gr[j] * hr[j];
                    dbeta[j] += gr[j];
                }
                let is = cache.inv_std[r];
                for j in 0..d {
                    let dh = gr[j] * gamma[j];
                    dx[r * d + j] = is * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                }
            }
            vec![
                Some(same_shape(g, dx)),
                Some(same_shape(x(1), dgamma)),
                Some(same_shape(x(2), dbeta)),
            ]
        }
        Op::Concat { dim } => {
            let (outer, inner) = outer_inner(g.shape(), *dim);
            let total = g.shape()[*dim] * inner;
            let mut offset = 0;
            let mut out = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                let chunk = input.shape()[*dim] * inner;
                let mut d = Vec::with_capacity(input.value.numel());
                for o in 0..outer {
                    d.extend_from_slice(&gd[o * total + offset..o * total + offset + chunk]);
                }
                offset += chunk;
                out.push(Some(same_shape(&input.value, d)));
            }
            out
        }
        Op::Narrow { dim, start } => {
            let src = x(0);
            let s = src.shape();
            let (outer, inner) = outer_inner(s, *dim);
            let len = g.shape()[*dim];
            let mut d = vec![T::zero(); src.numel()];
            for o in 0..outer {
                let base = o * s[*dim] * inner + start * inner;
                d[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(same_shape(src, d))]
        }
        Op::Embedding { ids } => {
            let table = x(0);
            let dim = table.shape()[1];
            let mut d = vec![T::zero(); table.numel()];
            for (i, &id) in ids.iter().enumerate() {
                for j in 0..dim {
                    d[id * dim + j] += gd[i * dim + j];
                }
            }
            vec![Some(same_shape(table, d))]
        }
        Op::Sum => vec![Some(Tensor::full(x(0).shape().to_vec(), gd[0]))],
        Op::Mean => {
            let n = x(0).numel();
            vec![Some(Tensor::full(x(0).shape().to_vec(), gd[0] / T::of(n as f64)))]
        }
        Op::CrossEntropy { labels, probs } => {
            let c = x(0).shape()[1];
            let scale = gd[0] / T::of(labels.len() as f64);
            let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                d[i * c + l] -= scale;
            }
            vec![Some(same_shape(x(0), d))]
        }
        Op::MaskedFill { mask } => {
            let mut d = gd.to_vec();
            for chunk in d.chunks_mut(mask.len()) {
                for (o, &m) in chunk.iter_mut().zip(mask.iter()) {
                    if m {
                        *o = T::zero();
                    }
                }
            }
            vec![Some(same_shape(g, d))]
        }
    })
}
