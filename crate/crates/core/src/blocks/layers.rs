use super::VariantSpec;
use crate::attention::{add_norm, attention_block, init_attention_params, init_norm, AttentionKind, AttentionMask, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Var};

/// `LayerNorm(relu(x·W1)·W2 + x)` with `{prefix}.e1.W` and `{prefix}.e2.W`.
pub fn ff_forward<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let w1 = tape.param(params, &format!("{prefix}.e1.W"))?;
    let w2 = tape.param(params, &format!("{prefix}.e2.W"))?;
    let h = tape.relu(&tape.matmul(x, &w1)?)?;
    let out = tape.matmul(&h, &w2)?;
    add_norm(tape, params, &out, x, prefix)
}

/// `LayerNorm(relu(x·E1·D1)·E2·D2 + x)`; factors are `{prefix}.e1.E`,
/// `{prefix}.d1.D`, `{prefix}.e2.E`, `{prefix}.d2.D`.
pub fn lrff_forward<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let p = |n: &str| tape.param(params, &format!("{prefix}.{n}"));
    let (e1, d1, e2, d2) = (p("e1.E")?, p("d1.D")?, p("e2.E")?, p("d2.D")?);
    let h = tape.matmul(&tape.matmul(x, &e1)?, &d1)?;
    let h = tape.relu(&h)?;
    let out = tape.matmul(&tape.matmul(&h, &e2)?, &d2)?;
    add_norm(tape, params, &out, x, prefix)
}

/// FF or LRFF, whichever the variant uses.
pub fn ff_sublayer_forward<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, prefix: &str, x: &Var<T>, spec: &VariantSpec) -> Result<Var<T>> {
    match spec.ff_rank() {
        Some(_) => lrff_forward(tape, params, prefix, x),
        None => ff_forward(tape, params, prefix, x),
    }
}

/// Registers FF (or LRFF, when `rank` is set) parameters under `prefix`.
pub fn init_ff_params<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rank: Option<usize>) -> Result<()> {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    match rank {
        Some(r) => {
            store.insert_xavier(format!("{prefix}.e1.E"), d, r)?;
            store.insert_xavier(format!("{prefix}.d1.D"), r, f)?;
            store.insert_xavier(format!("{prefix}.e2.E"), f, r)?;
            store.insert_xavier(format!("{prefix}.d2.D"), r, d)?;
        }
        None => {
            store.insert_xavier(format!("{prefix}.e1.W"), d, f)?;
            store.insert_xavier(format!("{prefix}.e2.W"), f, d)?;
        }
    }
    init_norm(store, prefix, d)
}

/// Self-attention sublayer then feed-forward sublayer. `prefix` is e.g. `enc.0`.
pub fn encoder_layer_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    x: &Var<T>,
    spec: &VariantSpec,
    mask: &AttentionMask,
) -> Result<Var<T>> {
    let kind = spec.attention_kind();
    let a = attention_block(tape, params, &format!("{prefix}.attn"), x, x, &spec.cfg, &kind, mask)?;
    ff_sublayer_forward(tape, params, &format!("{prefix}.ff"), &a, spec)
}

/// Causal self-attention, cross-attention over `enc_out`, then feed-forward.
pub fn decoder_layer_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    prefix: &str,
    y: &Var<T>,
    enc_out: &Var<T>,
    spec: &VariantSpec,
) -> Result<Var<T>> {
    let kind = spec.attention_kind();
    if matches!(kind, AttentionKind::Linformer(_)) {
        return Err(Error::UnsupportedVariant("Linformer decoder layers are not supported".into()));
    }
    let cfg = &spec.cfg;
    let s = attention_block(tape, params, &format!("{prefix}.attn"), y, y, cfg, &kind, &AttentionMask::Causal)?;
    let c = attention_block(tape, params, &format!("{prefix}.cross"), &s, enc_out, cfg, &kind, &AttentionMask::None)?;
    ff_sublayer_forward(tape, params, &format!("{prefix}.ff"), &c, spec)
}

pub fn encoder_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    x: &Var<T>,
    spec: &VariantSpec,
    mask: &AttentionMask,
) -> Result<Var<T>> {
    let mut h = x.clone();
    for i in 0..spec.cfg.n_enc_layers {
        h = encoder_layer_forward(tape, params, &format!("enc.{i}"), &h, spec, mask)?;
    }
    Ok(h)
}

pub fn decoder_forward<T: Real>(
    tape: &Tape<T>,
    params: &ParamStore<T>,
    y: &Var<T>,
    enc_out: &Var<T>,
    spec: &VariantSpec,
) -> Result<Var<T>> {
    let mut h = y.clone();
    for i in 0..spec.cfg.n_dec_layers {
        h = decoder_layer_forward(tape, params, &format!("dec.{i}"), &h, enc_out, spec)?;
    }
    Ok(h)
}

/// Encoder stack over `x`; with decoder layers configured, the decoder then
/// runs over `x` as its target sequence against the encoder output.
pub fn stack_forward<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, x: &Var<T>, spec: &VariantSpec) -> Result<Var<T>> {
    let enc = encoder_forward(tape, params, x, spec, &AttentionMask::None)?;
    if spec.cfg.n_dec_layers == 0 {
        return Ok(enc);
    }
    decoder_forward(tape, params, x, &enc, spec)
}

pub fn init_encoder_layer<T: Real>(store: &mut ParamStore<T>, prefix: &str, spec: &VariantSpec) -> Result<()> {
    init_attention_params(store, &format!("{prefix}.attn"), &spec.cfg, &spec.attention_kind())?;
    init_ff_params(store, &format!("{prefix}.ff"), &spec.cfg, spec.ff_rank())
}

pub fn init_decoder_layer<T: Real>(store: &mut ParamStore<T>, prefix: &str, spec: &VariantSpec) -> Result<()> {
    let kind = spec.attention_kind();
    if matches!(kind, AttentionKind::Linformer(_)) {
        return Err(Error::UnsupportedVariant("Linformer decoder layers are not supported".into()));
    }
    init_attention_params(store, &format!("{prefix}.attn"), &spec.cfg, &kind)?;
    init_attention_params(store, &format!("{prefix}.cross"), &spec.cfg, &kind)?;
    init_ff_params(store, &format!("{prefix}.ff"), &spec.cfg, spec.ff_rank())
}

/// Registers every encoder and decoder layer of `spec`.
pub fn init_stack_params<T: Real>(store: &mut ParamStore<T>, spec: &VariantSpec) -> Result<()> {
    spec.validate()?;
    for i in 0..spec.cfg.n_enc_layers {
        init_encoder_layer(store, &format!("enc.{i}"), spec)?;
    }
    for i in 0..spec.cfg.n_dec_layers {
        init_decoder_layer(store, &format!("dec.{i}"), spec)?;
    }
    Ok(())
}
