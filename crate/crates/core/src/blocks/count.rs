use serde::Serialize;

use super::{ClassifierShape, Variant, VariantSpec};

/// Closed-form parameter counts per component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Query/key/value/output projections.
    pub attention: u64,
    pub ff: u64,
    /// Linformer sequence projections `W^K̂`, `W^V̂`.
    pub linformer_proj: u64,
    pub norms: u64,
    pub embeddings: u64,
    pub head: u64,
    pub total: u64,
}

impl ParamCount {
    /// Matrices of the encoder/decoder layers, excluding norms, embeddings and head.
    pub fn weights_only(&self) -> u64 {
        self.attention + self.ff + self.linformer_proj
    }
}

/// Exact parameter counts for the layers of `spec`, plus embeddings and
/// classification head when `head` is given.
pub fn count_params(spec: &VariantSpec, head: Option<&ClassifierShape>) -> ParamCount {
    let c = &spec.cfg;
    let (d, f) = (c.d_model as u64, c.d_ff as u64);
    let (attn_proj, ff, lin_proj) = match spec.variant {
        Variant::Transformer => (4 * d * d, 2 * d * f, 0),
        Variant::Lrt { lowrank } => {
            let r = lowrank.r as u64;
            (4 * r * (d + d), 2 * r * (d + f), 0)
        }
        Variant::Linformer { linformer } => (4 * d * d, 2 * d * f, 2 * (linformer.k * linformer.n_max) as u64),
    };
    let (n_enc, n_dec) = (c.n_enc_layers as u64, c.n_dec_layers as u64);
    let attn_blocks = n_enc + 2 * n_dec;
    let ff_blocks = n_enc + n_dec;
    let mut count = ParamCount {
        attention: attn_blocks * attn_proj,
        ff: ff_blocks * ff,
        linformer_proj: n_enc * lin_proj,
        norms: (attn_blocks + ff_blocks) * 2 * d,
        ..ParamCount::default()
    };
    if let Some(h) = head {
        count.embeddings = (h.vocab as u64 + 1) * d + (h.max_len as u64 + 1) * d;
        count.head = d * h.n_classes as u64 + h.n_classes as u64;
    }
    count.total = count.weights_only() + count.norms + count.embeddings + count.head;
    count
}
