#![allow(dead_code)]

use greenformers::attention::{init_attention_params, lrmha_forward, mha_forward, linformer_attention, AttentionKind, AttentionMask};
use greenformers::blocks::{
    decoder_layer_forward, encoder_layer_forward, ff_forward, init_decoder_layer, init_encoder_layer, init_ff_params, led_forward,
    lrff_forward, LedLayer,
};
use greenformers::numcore::gradcheck::check;
use greenformers::numcore::{layer_norm, matmul, softmax_lastdim};
use greenformers::{
    ClassifierModel, ClassifierShape, LinformerConfig, LowRankConfig, ModelConfig, ParamStore, Result, Tape, Tensor, Var, VariantKind,
    VariantSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 5;
const PROBES_PER_PARAM: usize = 16;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), &mut rng(seed))
}

pub fn cfg(d: usize, h: usize, f: usize, n_enc: usize, n_dec: usize) -> ModelConfig {
    ModelConfig::new(d, h, f, n_enc, n_dec).unwrap()
}

/// Replaces every parameter, including norm scales and biases, with `scale · N(0, 1)`.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut r = rng(seed ^ 0xabcdef);
    for (_, p) in store.iter_mut() {
        let shape = p.value().shape().to_vec();
        *p.value_mut() = Tensor::<f64>::randn(shape, &mut r).map(|x| x * scale);
    }
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output coordinate matters.
pub fn contract(t: &Tape<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let r = t.constant(randn(y.shape(), seed ^ 0x1234));
    t.sum(&t.mul(y, &r)?)
}

fn copy_entry(out: &mut ParamStore<f64>, name: &str, value: &Tensor<f64>) {
    out.insert(name.to_string(), value.clone()).unwrap();
}

/// LRT parameters with `r = d_model` that reproduce a dense store exactly:
/// attention `E = I, D = W`; feed-forward `E1 = I, D1 = W1, E2 = W2, D2 = I`.
pub fn identity_factorize(dense: &ParamStore<f64>, d: usize) -> ParamStore<f64> {
    let mut out = ParamStore::new(dense.seed());
    for (name, p) in dense.iter() {
        let w = p.value();
        if let Some(base) = name.strip_suffix(".e1.W") {
            copy_entry(&mut out, &format!("{base}.e1.E"), &Tensor::eye(d));
            copy_entry(&mut out, &format!("{base}.d1.D"), w);
        } else if let Some(base) = name.strip_suffix(".e2.W") {
            copy_entry(&mut out, &format!("{base}.e2.E"), w);
            copy_entry(&mut out, &format!("{base}.d2.D"), &Tensor::eye(d));
        } else if let Some(base) = [".q.W", ".k.W", ".v.W", ".o.W"].iter().find_map(|s| name.strip_suffix(s).map(|b| (b, &s[..2]))) {
            copy_entry(&mut out, &format!("{}{}.E", base.0, base.1), &Tensor::eye(d));
            copy_entry(&mut out, &format!("{}{}.D", base.0, base.1), w);
        } else {
            copy_entry(&mut out, name, w);
        }
    }
    out
}

/// Dense parameters `W = E·D` equivalent to an LRT store.
pub fn materialize(lr: &ParamStore<f64>) -> ParamStore<f64> {
    let mut out = ParamStore::new(lr.seed());
    let pairs = [(".e1.E", ".d1.D", ".e1.W"), (".e2.E", ".d2.D", ".e2.W")];
    for (name, p) in lr.iter() {
        if let Some((base, dn, wn)) = pairs.iter().find_map(|(e, dn, wn)| name.strip_suffix(e).map(|b| (b, dn, wn))) {
            let dmat = lr.get(&format!("{base}{dn}")).unwrap();
            copy_entry(&mut out, &format!("{base}{wn}"), &matmul(p.value(), dmat).unwrap());
        } else if let Some(base) = name.strip_suffix(".E") {
            let dmat = lr.get(&format!("{base}.D")).unwrap();
            copy_entry(&mut out, &format!("{base}.W"), &matmul(p.value(), dmat).unwrap());
        } else if name.ends_with(".D") {
            continue;
        } else {
            copy_entry(&mut out, name, p.value());
        }
    }
    out
}

fn forward_once(f: impl Fn(&Tape<f64>) -> Result<Var<f64>>) -> Tensor<f64> {
    let t = Tape::disabled();
    f(&t).unwrap().into_tensor()
}

/// Max |LRMHA(E = I, D = W) − MHA(W)| over self- and cross-attention, with
/// and without a causal mask.
pub fn lrmha_identity_gap(seed: u64) -> f64 {
    let c = cfg(12, 3, 24, 1, 0);
    let mut dense = ParamStore::new(seed);
    init_attention_params(&mut dense, "a", &c, &AttentionKind::Dense).unwrap();
    randomize(&mut dense, seed, 0.4);
    let lr = identity_factorize(&dense, c.d_model);
    let lrc = LowRankConfig::new(c.d_model).unwrap();
    let xq = randn(&[2, 5, 12], seed + 1);
    let xkv = randn(&[2, 7, 12], seed + 2);
    let mut gap: f64 = 0.0;
    for (kv, mask) in [(&xq, AttentionMask::None), (&xq, AttentionMask::Causal), (&xkv, AttentionMask::None)] {
        let a = forward_once(|t| mha_forward(t, &dense, "a", &t.constant(xq.clone()), &t.constant(kv.clone()), &c, &mask));
        let b = forward_once(|t| lrmha_forward(t, &lr, "a", &t.constant(xq.clone()), &t.constant(kv.clone()), &c, &lrc, &mask));
        gap = gap.max(a.max_abs_diff(&b));
    }
    gap
}

/// Max |Linformer(k = n = n_max, W^K̂ = W^V̂ = I) − MHA self-attention|.
pub fn linformer_identity_gap(seed: u64) -> f64 {
    let c = cfg(12, 3, 24, 1, 0);
    let n = 6;
    let lin = LinformerConfig::new(n, n).unwrap();
    let mut store = ParamStore::new(seed);
    init_attention_params(&mut store, "a", &c, &AttentionKind::Linformer(lin)).unwrap();
    randomize(&mut store, seed, 0.4);
    store.set("a.khat.W", Tensor::eye(n)).unwrap();
    store.set("a.vhat.W", Tensor::eye(n)).unwrap();
    let x = randn(&[2, n, 12], seed + 1);
    let a = forward_once(|t| {
        let xv = t.constant(x.clone());
        mha_forward(t, &store, "a", &xv, &xv, &c, &AttentionMask::None)
    });
    let b = forward_once(|t| linformer_attention(t, &store, "a", &t.constant(x.clone()), &c, &lin));
    a.max_abs_diff(&b)
}

/// Max |(x·E)·D + b − x·(E·D) − b|.
pub fn led_materialized_gap(seed: u64) -> f64 {
    let led = LedLayer::new("led", 9, 7, 3, true).unwrap();
    let mut store = ParamStore::new(seed);
    led.init(&mut store).unwrap();
    randomize(&mut store, seed, 1.0);
    let x = randn(&[2, 4, 9], seed + 1);
    let a = forward_once(|t| led_forward(t, &store, &t.constant(x.clone()), &led));
    let w = matmul(store.get("led.E").unwrap(), store.get("led.D").unwrap()).unwrap();
    let dense = matmul(&x, &w).unwrap();
    let b = store.get("led.b").unwrap();
    let expect = Tensor::from_fn(dense.shape().to_vec(), |i| dense.get(i) + b.get(&[i[2]]));
    a.max_abs_diff(&expect)
}

/// Independently coded per-head attention on one unbatched sequence.
pub fn mha_oracle(store: &ParamStore<f64>, prefix: &str, xq: &Tensor<f64>, xkv: &Tensor<f64>, heads: usize, causal: bool) -> Tensor<f64> {
    let w = |p: &str| store.get(&format!("{prefix}.{p}.W")).unwrap();
    let q = matmul(xq, w("q")).unwrap();
    let k = matmul(xkv, w("k")).unwrap();
    let v = matmul(xkv, w("v")).unwrap();
    let (nq, nk, d) = (q.shape()[0], k.shape()[0], q.shape()[1]);
    let dk = d / heads;
    let mut concat = vec![0.0; nq * d];
    for h in 0..heads {
        let col = |t: &Tensor<f64>, rows: usize| Tensor::from_fn([rows, dk], |i| t.get(&[i[0], h * dk + i[1]]));
        let (qh, kh, vh) = (col(&q, nq), col(&k, nk), col(&v, nk));
        let scores = Tensor::from_fn([nq, nk], |i| {
            if causal && i[1] > i[0] {
                return -1e9;
            }
            (0..dk).map(|c| qh.get(&[i[0], c]) * kh.get(&[i[1], c])).sum::<f64>() / (dk as f64).sqrt()
        });
        let probs = softmax_lastdim(&scores).unwrap();
        let ctx = matmul(&probs, &vh).unwrap();
        for i in 0..nq {
            for c in 0..dk {
                concat[i * d + h * dk + c] = ctx.get(&[i, c]);
            }
        }
    }
    let concat = Tensor::new([nq, d], concat).unwrap();
    let out = matmul(&concat, w("o")).unwrap();
    let res = Tensor::from_fn([nq, d], |i| out.get(i) + xq.get(i));
    let g = store.get(&format!("{prefix}.norm.gamma")).unwrap();
    let b = store.get(&format!("{prefix}.norm.beta")).unwrap();
    layer_norm(&res, g, b, 1e-5).unwrap()
}

/// One entry of the gradient suite: worst relative error over all seeds.
#[derive(Debug)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_param: String,
}

fn grad_case<S, F>(name: &str, seeds: u64, setup: S, loss: F) -> GradEntry
where
    S: Fn(u64) -> ParamStore<f64>,
    F: Fn(&Tape<f64>, &ParamStore<f64>, u64) -> Result<Var<f64>>,
{
    let mut entry = GradEntry {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_param: String::new(),
    };
    for seed in 0..seeds {
        let store = setup(seed);
        let r = check(&store, GRAD_H, PROBES_PER_PARAM, |t, p| loss(t, p, seed)).unwrap();
        if r.max_rel_err >= entry.max_rel_err {
            entry.max_rel_err = r.max_rel_err;
            entry.worst_param = format!("{} (seed {seed})", r.worst);
        }
    }
    entry
}

fn store_with(seed: u64, init: impl FnOnce(&mut ParamStore<f64>)) -> ParamStore<f64> {
    let mut s = ParamStore::new(seed);
    init(&mut s);
    randomize(&mut s, seed, 0.5);
    s
}

fn small_spec(kind: VariantKind, c: ModelConfig) -> VariantSpec {
    match kind {
        VariantKind::Transformer => VariantSpec::transformer(c),
        VariantKind::Lrt => VariantSpec::lrt(c, 3),
        VariantKind::Linformer => VariantSpec::linformer(c, 3, 7),
    }
    .unwrap()
}

/// Finite-difference checks of every layer type, `seeds` seeds each.
pub fn gradient_suite(seeds: u64) -> Vec<GradEntry> {
    let c = cfg(8, 2, 12, 1, 0);
    let x_in = |seed: u64, n: usize| randn(&[2, n, 8], seed + 100);
    let mut out = Vec::new();

    let led = LedLayer::new("led", 6, 5, 3, true).unwrap();
    out.push(grad_case(
        "LED",
        seeds,
        |s| store_with(s, |st| led.init(st).unwrap()),
        |t, p, s| contract(t, &led_forward(t, p, &t.constant(randn(&[4, 6], s + 100)), &led)?, s),
    ));
    out.push(grad_case(
        "FF",
        seeds,
        |s| store_with(s, |st| init_ff_params(st, "ff", &c, None).unwrap()),
        |t, p, s| contract(t, &ff_forward(t, p, "ff", &t.constant(x_in(s, 5)))?, s),
    ));
    out.push(grad_case(
        "LRFF",
        seeds,
        |s| store_with(s, |st| init_ff_params(st, "ff", &c, Some(3)).unwrap()),
        |t, p, s| contract(t, &lrff_forward(t, p, "ff", &t.constant(x_in(s, 5)))?, s),
    ));
    for (label, mask, cross) in [
        ("MHA self", AttentionMask::None, false),
        ("MHA causal", AttentionMask::Causal, false),
        ("MHA cross", AttentionMask::None, true),
    ] {
        out.push(grad_case(
            label,
            seeds,
            |s| store_with(s, |st| init_attention_params(st, "a", &c, &AttentionKind::Dense).unwrap()),
            |t, p, s| {
                let xq = t.constant(x_in(s, 4));
                let xkv = if cross { t.constant(x_in(s + 7, 6)) } else { xq.clone() };
                contract(t, &mha_forward(t, p, "a", &xq, &xkv, &c, &mask)?, s)
            },
        ));
    }
    let lr = LowRankConfig::new(3).unwrap();
    for (label, mask) in [("LRMHA self", AttentionMask::None), ("LRMHA causal", AttentionMask::Causal)] {
        out.push(grad_case(
            label,
            seeds,
            |s| store_with(s, |st| init_attention_params(st, "a", &c, &AttentionKind::LowRank(lr)).unwrap()),
            |t, p, s| {
                let x = t.constant(x_in(s, 5));
                contract(t, &lrmha_forward(t, p, "a", &x, &x, &c, &lr, &mask)?, s)
            },
        ));
    }
    let lin = LinformerConfig::new(3, 7).unwrap();
    out.push(grad_case(
        "Linformer attention",
        seeds,
        |s| store_with(s, |st| init_attention_params(st, "a", &c, &AttentionKind::Linformer(lin)).unwrap()),
        |t, p, s| contract(t, &linformer_attention(t, p, "a", &t.constant(x_in(s, 5)), &c, &lin)?, s),
    ));
    for kind in VariantKind::ALL {
        let spec = small_spec(kind, c);
        out.push(grad_case(
            &format!("encoder layer ({kind})"),
            seeds,
            |s| store_with(s, |st| init_encoder_layer(st, "enc.0", &spec).unwrap()),
            |t, p, s| contract(t, &encoder_layer_forward(t, p, "enc.0", &t.constant(x_in(s, 5)), &spec, &AttentionMask::None)?, s),
        ));
    }
    for kind in [VariantKind::Transformer, VariantKind::Lrt] {
        let spec = small_spec(kind, cfg(8, 2, 12, 1, 1));
        out.push(grad_case(
            &format!("decoder layer ({kind})"),
            seeds,
            |s| store_with(s, |st| init_decoder_layer(st, "dec.0", &spec).unwrap()),
            |t, p, s| {
                let y = t.constant(x_in(s, 4));
                let enc = t.constant(x_in(s + 9, 6));
                contract(t, &decoder_layer_forward(t, p, "dec.0", &y, &enc, &spec)?, s)
            },
        ));
    }
    let cc = cfg(16, 2, 32, 2, 0);
    let shape = ClassifierShape {
        vocab: 10,
        max_len: 5,
        n_classes: 3,
    };
    for kind in VariantKind::ALL {
        let spec = match kind {
            VariantKind::Transformer => VariantSpec::transformer(cc),
            VariantKind::Lrt => VariantSpec::lrt(cc, 4),
            VariantKind::Linformer => VariantSpec::linformer(cc, 4, 6),
        }
        .unwrap();
        let model = ClassifierModel::new(spec, shape).unwrap();
        out.push(grad_case(
            &format!("classifier ({kind})"),
            seeds,
            |s| {
                let mut st = model.init_params::<f64>(s).unwrap();
                randomize(&mut st, s, 0.5);
                st
            },
            |t, p, s| {
                let mut r = rng(s + 55);
                let seqs: Vec<Vec<usize>> = (0..3).map(|_| (0..5).map(|_| rand::Rng::random_range(&mut r, 0..10)).collect()).collect();
                let batch: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
                let logits = model.forward(t, p, &batch)?;
                t.cross_entropy(&logits, &[0, 2, 1])
            },
        ));
    }
    out
}
