//! Closed-form parameter, MAC and memory accounting for each variant.
//!
//! MACs count matrix-product multiply-accumulates only: an `(a×b)·(b×c)`
//! product costs `a·b·c`. Softmax, normalisation, activation and elementwise
//! costs are not counted. Backward is taken as twice the forward cost.
//!
//! Memory is a tensor ledger, not an allocator model. For training, every
//! tensor that backward needs (inputs of matrix products, softmax and layer
//! norm) is retained for the whole pass. For inference only one sublayer's
//! tensors are live at a time. Per sublayer, with `n` queries, `m` keys,
//! `H` heads and model width `d`, the ledger holds:
//!
//! | entry            | elements (attention)              |
//! |------------------|-----------------------------------|
//! | `input`          | `n·d` (plus `m·d` for cross-attn)  |
//! | `bottleneck`     | `(n + 2m + n)·r` (LRT only)        |
//! | `q`, `k`, `v`    | `n·d`, `m·d`, `m·d`                |
//! | `khat`, `vhat`   | `k·d` each (Linformer only)        |
//! | `attn_scores`    | `H·n·m` (`H·n·k` for Linformer)    |
//! | `attn_probs`     | `H·n·m` (`H·n·k` for Linformer)    |
//! | `context`        | `n·d`                              |
//! | `residual`       | `n·d`                              |
//!
//! and for a feed-forward sublayer: `input` `n·d`, `bottleneck` `2·n·r`
//! (LRT only), `hidden` `n·d_ff`, `activation` `n·d_ff`, `residual` `n·d`.
//! Activation entries scale linearly with batch size; parameters do not.

use serde::Serialize;

use crate::attention::{attention_block, AttentionMask};
use crate::blocks::{count_params, ff_sublayer_forward, init_stack_params, Variant, VariantKind, VariantSpec};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Tensor};

/// Backward costs twice the forward MACs.
pub const FWD_BWD_FACTOR: u64 = 3;

/// Forward MACs attributed to one named sublayer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MacComponent {
    pub name: String,
    pub macs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sublayer {
    SelfAttn,
    CrossAttn,
    Ff,
}

fn sublayers(spec: &VariantSpec) -> Vec<(String, Sublayer)> {
    let mut out = Vec::new();
    for i in 0..spec.cfg.n_enc_layers {
        out.push((format!("enc.{i}.attn"), Sublayer::SelfAttn));
        out.push((format!("enc.{i}.ff"), Sublayer::Ff));
    }
    for i in 0..spec.cfg.n_dec_layers {
        out.push((format!("dec.{i}.attn"), Sublayer::SelfAttn));
        out.push((format!("dec.{i}.cross"), Sublayer::CrossAttn));
        out.push((format!("dec.{i}.ff"), Sublayer::Ff));
    }
    out
}

fn check_len(spec: &VariantSpec, n: usize) -> Result<()> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sequence length must be >= 1".into()));
    }
    if let Some(lin) = spec.linformer_config() {
        lin.check_len(n)?;
    }
    Ok(())
}

/// MACs of one projection applied to a single token.
fn proj_macs_per_token(spec: &VariantSpec) -> u64 {
    let d = spec.cfg.d_model as u64;
    match spec.variant {
        Variant::Lrt { lowrank } => lowrank.r as u64 * 2 * d,
        _ => d * d,
    }
}

/// Attention sublayer MACs for `nq` queries over `nk` keys.
fn attention_macs(spec: &VariantSpec, nq: u64, nk: u64) -> u64 {
    let d = spec.cfg.d_model as u64;
    let proj = proj_macs_per_token(spec) * (2 * nq + 2 * nk);
    let core = match spec.variant {
        // K̂ and V̂ projections, then scores and weighted sum over k positions
        Variant::Linformer { linformer } => 4 * nq * linformer.k as u64 * d,
        _ => 2 * nq * nk * d,
    };
    proj + core
}

fn ff_macs(spec: &VariantSpec, n: u64) -> u64 {
    let (d, f) = (spec.cfg.d_model as u64, spec.cfg.d_ff as u64);
    match spec.variant {
        Variant::Lrt { lowrank } => n * 2 * lowrank.r as u64 * (d + f),
        _ => n * 2 * d * f,
    }
}

/// Per-sublayer forward MACs at batch 1 (decoder target length = `n`).
pub fn mac_breakdown(spec: &VariantSpec, n: usize) -> Result<Vec<MacComponent>> {
    check_len(spec, n)?;
    let n = n as u64;
    Ok(sublayers(spec)
        .into_iter()
        .map(|(name, kind)| {
            let macs = match kind {
                Sublayer::SelfAttn | Sublayer::CrossAttn => attention_macs(spec, n, n),
                Sublayer::Ff => ff_macs(spec, n),
            };
            MacComponent { name, macs }
        })
        .collect())
}

/// Total forward MACs of the encoder (and decoder) stack at batch 1.
pub fn macs_forward(spec: &VariantSpec, n: usize) -> Result<u64> {
    Ok(mac_breakdown(spec, n)?.iter().map(|c| c.macs).sum())
}

/// Attention-core MACs only (scores and weighted sum, plus the K̂/V̂
/// projections for Linformer) of one self-attention sublayer.
pub fn attention_core_macs(spec: &VariantSpec, n: usize) -> Result<u64> {
    check_len(spec, n)?;
    let n = n as u64;
    Ok(attention_macs(spec, n, n) - proj_macs_per_token(spec) * 4 * n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    Train,
    Infer,
}

/// One named tensor of the activation ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub sublayer: String,
    pub name: &'static str,
    pub elements: u64,
}

/// Cached activations of one forward pass at batch 1.
pub fn activation_ledger(spec: &VariantSpec, n: usize) -> Result<Vec<LedgerEntry>> {
    check_len(spec, n)?;
    let (d, f, h) = (spec.cfg.d_model as u64, spec.cfg.d_ff as u64, spec.cfg.n_heads as u64);
    let nn = n as u64;
    let r = match spec.variant {
        Variant::Lrt { lowrank } => Some(lowrank.r as u64),
        _ => None,
    };
    let mut out = Vec::new();
    for (sub, kind) in sublayers(spec) {
        let mut push = |name: &'static str, elements: u64| {
            out.push(LedgerEntry {
                sublayer: sub.clone(),
                name,
                elements,
            })
        };
        match kind {
            Sublayer::SelfAttn | Sublayer::CrossAttn => {
                let m = nn;
                let input = if kind == Sublayer::CrossAttn { nn * d + m * d } else { nn * d };
                push("input", input);
                if let Some(r) = r {
                    push("bottleneck", (nn + 2 * m + nn) * r);
                }
                push("q", nn * d);
                push("k", m * d);
                push("v", m * d);
                let keys = match spec.variant {
                    Variant::Linformer { linformer } => {
                        let k = linformer.k as u64;
                        push("khat", k * d);
                        push("vhat", k * d);
                        k
                    }
                    _ => m,
                };
                push("attn_scores", h * nn * keys);
                push("attn_probs", h * nn * keys);
                push("context", nn * d);
                push("residual", nn * d);
            }
            Sublayer::Ff => {
                push("input", nn * d);
                if let Some(r) = r {
                    push("bottleneck", 2 * nn * r);
                }
                push("hidden", nn * f);
                push("activation", nn * f);
                push("residual", nn * d);
            }
        }
    }
    Ok(out)
}

/// Bytes needed for a forward pass (`Infer`) or a forward pass that keeps
/// everything backward needs plus parameter gradients (`Train`).
pub fn memory_estimate(spec: &VariantSpec, n: usize, mode: MemoryMode, element_size: usize, batch: usize) -> Result<u64> {
    let ledger = activation_ledger(spec, n)?;
    let es = element_size as u64;
    let b = batch as u64;
    let param_bytes = count_params(spec, None).total * es;
    Ok(match mode {
        MemoryMode::Train => 2 * param_bytes + ledger.iter().map(|e| e.elements).sum::<u64>() * es * b,
        MemoryMode::Infer => {
            let mut peak = 0u64;
            let mut i = 0;
            while i < ledger.len() {
                let sub = &ledger[i].sublayer;
                let live: u64 = ledger[i..].iter().take_while(|e| &e.sublayer == sub).map(|e| e.elements).sum();
                peak = peak.max(live);
                i += ledger[i..].iter().take_while(|e| &e.sublayer == sub).count();
            }
            param_bytes + peak * es * b
        }
    })
}

/// Analytic metrics of one `(variant, config, n)` point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub variant: VariantKind,
    pub n: usize,
    pub rank: usize,
    pub params: u64,
    pub macs_fwd: u64,
    pub macs_fwd_bwd: u64,
    pub mem_infer_bytes: u64,
    pub mem_train_bytes: u64,
    pub element_size: usize,
}

pub fn cost_report(spec: &VariantSpec, n: usize, element_size: usize, batch: usize) -> Result<CostReport> {
    let macs_fwd = macs_forward(spec, n)?;
    Ok(CostReport {
        variant: spec.kind(),
        n,
        rank: spec.rank().unwrap_or(0),
        params: count_params(spec, None).total,
        macs_fwd,
        macs_fwd_bwd: FWD_BWD_FACTOR * macs_fwd,
        mem_infer_bytes: memory_estimate(spec, n, MemoryMode::Infer, element_size, batch)?,
        mem_train_bytes: memory_estimate(spec, n, MemoryMode::Train, element_size, batch)?,
        element_size,
    })
}

/// Smallest `n` in `1..=limit` at which `a` needs fewer forward MACs than `b`,
/// provided `a` stays cheaper for every longer length up to `limit`.
pub fn crossover_len(a: &VariantSpec, b: &VariantSpec, limit: usize) -> Result<Option<usize>> {
    let mut found = None;
    for n in 1..=limit {
        let cheaper = macs_forward(a, n)? < macs_forward(b, n)?;
        match (cheaper, found) {
            (true, None) => found = Some(n),
            (false, Some(_)) => found = None,
            _ => {}
        }
    }
    Ok(found)
}

/// Analytic against measured MACs, per sublayer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub analytic: u64,
    pub measured: u64,
    pub components: Vec<(String, u64, u64)>,
}

/// Runs a real forward at batch 1 with the MAC counter on, one sublayer at a time.
pub fn measure_breakdown(spec: &VariantSpec, n: usize, seed: u64) -> Result<Vec<MacComponent>> {
    check_len(spec, n)?;
    let mut store = ParamStore::<f32>::new(seed);
    init_stack_params(&mut store, spec)?;
    let tape = Tape::disabled().with_mac_counter();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let x = tape.constant(Tensor::randn([1, n, spec.cfg.d_model], &mut rng));
    let kind = spec.attention_kind();
    let cfg = &spec.cfg;
    let mut out = Vec::new();
    let mut h = x.clone();
    let mut enc_out = None;
    for (name, sub) in sublayers(spec) {
        if name.starts_with("dec.") && enc_out.is_none() {
            enc_out = Some(h.clone());
            h = x.clone();
        }
        let before = tape.macs().total();
        h = match sub {
            Sublayer::SelfAttn => {
                let mask = if name.starts_with("dec.") {
                    AttentionMask::Causal
                } else {
                    AttentionMask::None
                };
                attention_block(&tape, &store, &name, &h, &h, cfg, &kind, &mask)?
            }
            Sublayer::CrossAttn => {
                let mem = enc_out.as_ref().expect("encoder output precedes decoder");
                attention_block(&tape, &store, &name, &h, mem, cfg, &kind, &AttentionMask::None)?
            }
            Sublayer::Ff => ff_sublayer_forward(&tape, &store, &name, &h, spec)?,
        };
        out.push(MacComponent {
            name,
            macs: tape.macs().total() - before,
        });
    }
    Ok(out)
}

/// Fails with a per-component diff unless both breakdowns agree exactly.
pub fn compare_breakdowns(analytic: &[MacComponent], measured: &[MacComponent]) -> Result<ValidationReport> {
    let mut diffs = Vec::new();
    let mut components = Vec::new();
    if analytic.len() != measured.len() {
        diffs.push(format!("{} analytic vs {} measured components", analytic.len(), measured.len()));
    }
    for (a, m) in analytic.iter().zip(measured) {
        if a.name != m.name || a.macs != m.macs {
            diffs.push(format!(
                "{}: analytic {} vs measured {} ({:+})",
                a.name,
                a.macs,
                m.macs,
                m.macs as i128 - a.macs as i128
            ));
        }
        components.push((a.name.clone(), a.macs, m.macs));
    }
    if !diffs.is_empty() {
        return Err(Error::Validation(diffs.join("; ")));
    }
    Ok(ValidationReport {
        analytic: analytic.iter().map(|c| c.macs).sum(),
        measured: measured.iter().map(|c| c.macs).sum(),
        components,
    })
}

/// Checks the closed-form MAC count against an instrumented forward pass.
pub fn validate_against_instrumentation(spec: &VariantSpec, n: usize) -> Result<ValidationReport> {
    let analytic = mac_breakdown(spec, n)?;
    let measured = measure_breakdown(spec, n, 0)?;
    compare_breakdowns(&analytic, &measured)
}
