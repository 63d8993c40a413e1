//! Network blocks for the three variants and their assembly into encoder and
//! decoder stacks and a sequence classifier.

mod count;
mod layers;
mod led;
mod model;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, LinformerConfig, LowRankConfig, ModelConfig};
use crate::error::Result;

pub use count::{count_params, ParamCount};
pub use layers::{
    decoder_forward, decoder_layer_forward, encoder_forward, encoder_layer_forward, ff_forward, ff_sublayer_forward, init_decoder_layer,
    init_encoder_layer, init_ff_params, init_stack_params, lrff_forward, stack_forward,
};
pub use led::{led_forward, LedLayer};
pub use model::{load_model, save_model, ClassifierModel, ClassifierShape, ModelSidecar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Transformer,
    Lrt,
    Linformer,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Transformer, VariantKind::Lrt, VariantKind::Linformer];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::Transformer => "transformer",
            VariantKind::Lrt => "lrt",
            VariantKind::Linformer => "linformer",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(VariantKind::Transformer),
            "lrt" => Ok(VariantKind::Lrt),
            "linformer" => Ok(VariantKind::Linformer),
            other => Err(crate::Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Which variant, with only the hyperparameters that variant uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Variant {
    Transformer,
    Lrt { lowrank: LowRankConfig },
    Linformer { linformer: LinformerConfig },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub cfg: ModelConfig,
    #[serde(flatten)]
    pub variant: Variant,
}

impl VariantSpec {
    pub fn transformer(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(VariantSpec {
            cfg,
            variant: Variant::Transformer,
        })
    }

    pub fn lrt(cfg: ModelConfig, r: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(VariantSpec {
            cfg,
            variant: Variant::Lrt {
                lowrank: LowRankConfig::new(r)?,
            },
        })
    }

    pub fn linformer(cfg: ModelConfig, k: usize, n_max: usize) -> Result<Self> {
        cfg.validate()?;
        let spec = VariantSpec {
            cfg,
            variant: Variant::Linformer {
                linformer: LinformerConfig::new(k, n_max)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the spec for `kind`, using `rank` as `r` (LRT) or `k` (Linformer).
    pub fn of_kind(kind: VariantKind, cfg: ModelConfig, rank: usize, n_max: usize) -> Result<Self> {
        match kind {
            VariantKind::Transformer => Self::transformer(cfg),
            VariantKind::Lrt => Self::lrt(cfg, rank),
            VariantKind::Linformer => Self::linformer(cfg, rank, n_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        match &self.variant {
            Variant::Transformer => Ok(()),
            Variant::Lrt { lowrank } => LowRankConfig::new(lowrank.r).map(|_| ()),
            Variant::Linformer { linformer } => {
                linformer.validate()?;
                if self.cfg.n_dec_layers > 0 {
                    return Err(crate::Error::UnsupportedVariant(
                        "Linformer has no decoder (its sequence projection mixes future positions)".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> VariantKind {
        match self.variant {
            Variant::Transformer => VariantKind::Transformer,
            Variant::Lrt { .. } => VariantKind::Lrt,
            Variant::Linformer { .. } => VariantKind::Linformer,
        }
    }

    /// `r` for LRT, `k` for Linformer.
    pub fn rank(&self) -> Option<usize> {
        match self.variant {
            Variant::Transformer => None,
            Variant::Lrt { lowrank } => Some(lowrank.r),
            Variant::Linformer { linformer } => Some(linformer.k),
        }
    }

    pub fn attention_kind(&self) -> AttentionKind {
        match self.variant {
            Variant::Transformer => AttentionKind::Dense,
            Variant::Lrt { lowrank } => AttentionKind::LowRank(lowrank),
            Variant::Linformer { linformer } => AttentionKind::Linformer(linformer),
        }
    }

    /// Low-rank factor of the feed-forward sublayers; only LRT factorizes them.
    pub fn ff_rank(&self) -> Option<usize> {
        match self.variant {
            Variant::Lrt { lowrank } => Some(lowrank.r),
            _ => None,
        }
    }

    pub fn linformer_config(&self) -> Option<&LinformerConfig> {
        match &self.variant {
            Variant::Linformer { linformer } => Some(linformer),
            _ => None,
        }
    }
}
