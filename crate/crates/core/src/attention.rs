//! Scaled dot-product attention and the three multi-head variants: dense,
//! low-rank factorized (LRMHA) and Linformer.
//!
//! Every sublayer shares one wrapper: project, split into heads, attend,
//! merge, output-project, add the query input back, layer-norm. Inputs are
//! `[batch, n, d_model]`; a rank-2 `[n, d_model]` input is treated as a batch
//! of one and returned at rank 2.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Var};

/// Logit written into masked attention positions before the softmax.
pub const MASK_SENTINEL: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    #[serde(default)]
    pub n_dec_layers: usize,
}

impl ModelConfig {
    pub fn new(d_model: usize, n_heads: usize, d_ff: usize, n_enc_layers: usize, n_dec_layers: usize) -> Result<Self> {
        let cfg = ModelConfig {
            d_model,
            n_heads,
            d_ff,
            n_enc_layers,
            n_dec_layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Two encoder layers, d_model 768, 12 heads, feed-forward 3072.
    pub fn efficiency_default() -> Self {
        ModelConfig {
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            n_enc_layers: 2,
            n_dec_layers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::Config(format!("d_model, n_heads and d_ff must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Per-head key/value width, `d_model / n_heads`.
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowRankConfig {
    pub r: usize,
}

impl LowRankConfig {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("low-rank factor r must be >= 1".into()));
        }
        Ok(LowRankConfig { r })
    }

    /// True when an `m×n` factorization at this rank has fewer parameters than the dense matrix.
    pub fn compresses(&self, m: usize, n: usize) -> bool {
        self.r * (m + n) < m * n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinformerConfig {
    pub k: usize,
    pub n_max: usize,
}

impl LinformerConfig {
    pub fn new(k: usize, n_max: usize) -> Result<Self> {
        let c = LinformerConfig { k, n_max };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n_max {
            return Err(Error::Config(format!(
                "Linformer needs 1 <= k <= n_max, got k = {}, n_max = {}",
                self.k, self.n_max
            )));
        }
        Ok(())
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if n > self.n_max {
            return Err(Error::SequenceLength { n, n_max: self.n_max });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum AttentionMask {
    #[default]
    None,
    /// Position `t` may not attend to any `u > t`.
    Causal,
    /// Keys at positions `>= valid_len[b]` are hidden for batch row `b`.
    Padding(Vec<usize>),
}

/// How the four attention projections are parameterised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Dense,
    LowRank(LowRankConfig),
    Linformer(LinformerConfig),
}

/// `true` at positions `(t, u)` with `u > t`.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|i| i % n > i / n).collect()
}

fn mask_layout(mask: &AttentionMask, lead: &[usize], nq: usize, nk: usize) -> Result<Option<(Arc<Vec<bool>>, Vec<usize>)>> {
    match mask {
        AttentionMask::None => Ok(None),
        AttentionMask::Causal => {
            if nq != nk {
                return Err(Error::shape("causal mask", format!("needs square scores, got {nq}×{nk}")));
            }
            Ok(Some((Arc::new(causal_mask(nq)), vec![nq, nk])))
        }
        AttentionMask::Padding(lens) => {
            let batch = lead.first().copied().unwrap_or(1);
            if lens.len() != batch {
                return Err(Error::shape(
                    "padding mask",
                    format!("{} lengths for batch of {batch}", lens.len()),
                ));
            }
            if let Some(&bad) = lens.iter().find(|&&l| l == 0 || l > nk) {
                return Err(Error::shape("padding mask", format!("valid length {bad} outside 1..={nk}")));
            }
            let per_row: usize = lead.iter().skip(1).product::<usize>() * nq * nk;
            let mut m = Vec::with_capacity(batch * per_row);
            for &len in lens {
                m.extend((0..per_row).map(|i| i % nk >= len));
            }
            let mut shape = lead.to_vec();
            shape.extend([nq, nk]);
            Ok(Some((Arc::new(m), shape)))
        }
    }
}

/// Sets entries above the diagonal of the trailing `n×n` block to the mask sentinel.
pub fn apply_causal_mask<T: Real>(tape: &Tape<T>, scores: &Var<T>) -> Result<Var<T>> {
    let s = scores.shape();
    if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
        return Err(Error::shape("apply_causal_mask", format!("needs square logits, got {s:?}")));
    }
    let n = s[s.len() - 1];
    tape.masked_fill(scores, Arc::new(causal_mask(n)), &[n, n], MASK_SENTINEL)
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` over the last two dimensions.
pub fn sdpa<T: Real>(tape: &Tape<T>, q: &Var<T>, k: &Var<T>, v: &Var<T>, mask: &AttentionMask) -> Result<Var<T>> {
    let (probs, _) = attention_probs(tape, q, k, mask)?;
    let (ks, vs) = (k.shape(), v.shape());
    if vs.len() < 2 || vs[vs.len() - 2] != ks[ks.len() - 2] {
        return Err(Error::Dimension {
            op: "sdpa (value length)",
            lhs: ks.to_vec(),
            rhs: vs.to_vec(),
        });
    }
    tape.matmul(&probs, v)
}

/// Attention weights `softmax(Q Kᵀ / sqrt(d_k))` and their shape.
pub fn attention_probs<T: Real>(tape: &Tape<T>, q: &Var<T>, k: &Var<T>, mask: &AttentionMask) -> Result<(Var<T>, Vec<usize>)> {
    let (qs, ks) = (q.shape(), k.shape());
    if qs.len() < 2 || ks.len() < 2 || qs[qs.len() - 1] != ks[ks.len() - 1] {
        return Err(Error::Dimension {
            op: "sdpa (d_k)",
            lhs: qs.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    let d_k = qs[qs.len() - 1];
    let scores = tape.matmul(q, &tape.transpose(k)?)?;
    let scores = tape.scale(&scores, 1.0 / (d_k as f64).sqrt())?;
    let shape = scores.shape().to_vec();
    let (lead, tail) = shape.split_at(shape.len() - 2);
    let scores = match mask_layout(mask, lead, tail[0], tail[1])? {
        Some((m, mshape)) => tape.masked_fill(&scores, m, &mshape, MASK_SENTINEL)?,
        None => scores,
    };
    Ok((tape.softmax(&scores)?, shape))
}

pub(crate) fn as_batched<T: Real>(tape: &Tape<T>, x: &Var<T>) -> Result<(Var<T>, bool)> {
    match x.shape().len() {
        2 => {
            let s = x.shape();
            Ok((tape.reshape(x, &[1, s[0], s[1]])?, true))
        }
        3 => Ok((x.clone(), false)),
        r => Err(Error::shape("attention input", format!("expected rank 2 or 3, got rank {r}"))),
    }
}

pub(crate) fn unbatch<T: Real>(tape: &Tape<T>, x: Var<T>, was_2d: bool) -> Result<Var<T>> {
    if was_2d {
        let s = x.shape().to_vec();
        tape.reshape(&x, &s[1..])
    } else {
        Ok(x)
    }
}

/// `x·W`, or `(x·E)·D` when `factorized`; never forms `E·D`.
pub fn project<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, x: &Var<T>, prefix: &str, factorized: bool) -> Result<Var<T>> {
    if factorized {
        let e = tape.param(params, &format!("{prefix}.E"))?;
        let d = tape.param(params, &format!("{prefix}.D"))?;
        tape.matmul(&tape.matmul(x, &e)?, &d)
    } else {
        tape.matmul(x, &tape.param(params, &format!("{prefix}.W"))?)
    }
}

/// `LayerNorm(x + residual)` with the `{prefix}.norm.{gamma,beta}` parameters.
pub fn add_norm<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, x: &Var<T>, residual: &Var<T>, prefix: &str) -> Result<Var<T>> {
    let sum = tape.add(x, residual)?;
    let gamma = tape.param(params, &format!("{prefix}.norm.gamma"))?;
    let beta = tape.param(params, &format!("{prefix}.norm.beta"))?;
    tape.layer_norm(&sum, &gamma, &beta, LAYER_NORM_EPS)
}

fn split_heads<T: Real>(tape: &Tape<T>, x: &Var<T>, heads: usize) -> Result<Var<T>> {
    let s = x.shape().to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    if d % heads != 0 {
        return Err(Error::shape("split_heads", format!("width {d} not divisible by {heads} heads")));
    }
    let r = tape.reshape(x, &[b, n, heads, d / heads])?;
    tape.permute(&r, &[0, 2, 1, 3])
}

fn merge_heads<T: Real>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let s = x.shape().to_vec();
    let (b, h, n, dh) = (s[0], s[1], s[2], s[3]);
    let p = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(&p, &[b, n, h * dh])
}

fn check_width(cfg: &ModelConfig, x: &Var<impl Real>, what: &'static str) -> Result<()> {
    let s = x.shape();
    if s[s.len() - 1] != cfg.d_model {
        return Err(Error::Dimension {
            op: what,
            lhs: s.to_vec(),
            rhs: vec![cfg.d_model],
        });
    }
    Ok(())
}

/// The shared multi-head sublayer. `prefix` is e.g. `enc.0.attn`.
pub fn attention_block<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x_q: &Var<T>,
    x_kv: &Var<T>,
    cfg: &ModelConfig,
    kind: &AttentionKind,
    mask: &AttentionMask,
) -> Result<Var<T>> {
    cfg.validate()?;
    check_width(cfg, x_q, "attention query input")?;
    check_width(cfg, x_kv, "attention key/value input")?;
    let (xq, q2d) = as_batched(tape, x_q)?;
    let (xkv, kv2d) = as_batched(tape, x_kv)?;
    if xq.shape()[0] != xkv.shape()[0] || q2d != kv2d {
        return Err(Error::Dimension {
            op: "attention batch",
            lhs: x_q.shape().to_vec(),
            rhs: x_kv.shape().to_vec(),
        });
    }
    let factorized = match kind {
        AttentionKind::LowRank(lr) => {
            let e = params.get(&format!("{prefix}.q.E"))?;
            if lr.r == 0 || e.shape()[1] != lr.r {
                return Err(Error::Config(format!(
                    "{prefix}: stored rank {} does not match configured r = {}",
                    e.shape()[1],
                    lr.r
                )));
            }
            true
        }
        _ => false,
    };
    let q = project(tape, params, &xq, &format!("{prefix}.q"), factorized)?;
    let mut k = project(tape, params, &xkv, &format!("{prefix}.k"), factorized)?;
    let mut v = project(tape, params, &xkv, &format!("{prefix}.v"), factorized)?;

    if let AttentionKind::Linformer(lin) = kind {
        if *mask != AttentionMask::None {
            return Err(Error::UnsupportedVariant(
                "Linformer attention supports neither causal nor padding masks".into(),
            ));
        }
        let n = xkv.shape()[1];
        lin.check_len(n)?;
        k = tape.matmul(&sequence_projection(tape, params, &format!("{prefix}.khat"), lin, n)?, &k)?;
        v = tape.matmul(&sequence_projection(tape, params, &format!("{prefix}.vhat"), lin, n)?, &v)?;
    }

    let h = cfg.n_heads;
    let qh = split_heads(tape, &q, h)?;
    let kh = split_heads(tape, &k, h)?;
    let vh = split_heads(tape, &v, h)?;
    let ctx = sdpa(tape, &qh, &kh, &vh, mask)?;
    let merged = merge_heads(tape, &ctx)?;
    let out = project(tape, params, &merged, &format!("{prefix}.o"), factorized)?;
    let y = add_norm(tape, params, &out, &xq, prefix)?;
    unbatch(tape, y, q2d)
}

/// `W^K̂` or `W^V̂` restricted to its first `n` columns.
fn sequence_projection<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, name: &str, lin: &LinformerConfig, n: usize) -> Result<Var<T>> {
    let w = tape.param(params, &format!("{name}.W"))?;
    if w.shape() != [lin.k, lin.n_max] {
        return Err(Error::Dimension {
            op: "linformer projection",
            lhs: w.shape().to_vec(),
            rhs: vec![lin.k, lin.n_max],
        });
    }
    if n == lin.n_max {
        Ok(w)
    } else {
        tape.narrow(&w, 1, 0, n)
    }
}

/// Standard multi-head attention sublayer.
pub fn mha_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x_q: &Var<T>,
    x_kv: &Var<T>,
    cfg: &ModelConfig,
    mask: &AttentionMask,
) -> Result<Var<T>> {
    attention_block(tape, params, prefix, x_q, x_kv, cfg, &AttentionKind::Dense, mask)
}

/// Low-rank multi-head attention: every projection `W` replaced by `E·D`.
#[allow(clippy::too_many_arguments)]
pub fn lrmha_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x_q: &Var<T>,
    x_kv: &Var<T>,
    cfg: &ModelConfig,
    lr: &LowRankConfig,
    mask: &AttentionMask,
) -> Result<Var<T>> {
    if lr.r == 0 {
        return Err(Error::Config("low-rank factor r must be >= 1".into()));
    }
    attention_block(tape, params, prefix, x_q, x_kv, cfg, &AttentionKind::LowRank(*lr), mask)
}

/// Linformer self-attention: keys and values are projected along the sequence
/// axis to length `k` before the softmax.
pub fn linformer_attention<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x: &Var<T>,
    cfg: &ModelConfig,
    lin: &LinformerConfig,
) -> Result<Var<T>> {
    attention_block(tape, params, prefix, x, x, cfg, &AttentionKind::Linformer(*lin), &AttentionMask::None)
}

/// Registers the parameters of one attention sublayer under `prefix`.
pub fn init_attention_params<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, kind: &AttentionKind) -> Result<()> {
    let d = cfg.d_model;
    for p in ["q", "k", "v", "o"] {
        match kind {
            AttentionKind::LowRank(lr) => {
                store.insert_xavier(format!("{prefix}.{p}.E"), d, lr.r)?;
                store.insert_xavier(format!("{prefix}.{p}.D"), lr.r, d)?;
            }
            _ => store.insert_xavier(format!("{prefix}.{p}.W"), d, d)?,
        }
    }
    if let AttentionKind::Linformer(lin) = kind {
        lin.validate()?;
        store.insert_xavier(format!("{prefix}.khat.W"), lin.k, lin.n_max)?;
        store.insert_xavier(format!("{prefix}.vhat.W"), lin.k, lin.n_max)?;
    }
    init_norm(store, prefix, d)
}

pub(crate) fn init_norm<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<()> {
    store.insert_const(format!("{prefix}.norm.gamma"), &[d], 1.0)?;
    store.insert_const(format!("{prefix}.norm.beta"), &[d], 0.0)
}
