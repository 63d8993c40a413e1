use std::path::Path;

use anyhow::{bail, Context, Result};
use greenformers::attention::{LinformerConfig, LowRankConfig};
use greenformers::bench::{BenchMode, BenchOptions};
use greenformers::{Dtype, ModelConfig, TrainConfig, VariantKind, VariantSpec};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "GFL_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub seq_lens: Vec<usize>,
    pub batch: usize,
    pub runs: usize,
    pub warmup: usize,
    pub mode: BenchMode,
}

impl Default for BenchSection {
    fn default() -> Self {
        let o = BenchOptions::default();
        BenchSection {
            seq_lens: vec![128, 256, 512, 1024],
            batch: o.batch,
            runs: o.runs,
            warmup: o.warmup,
            mode: BenchMode::Fwd,
        }
    }
}

/// Run configuration shared by every subcommand.
///
/// The top-level `seed` (or `GFL_SEED`) seeds every random stream, including
/// training, and replaces `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelConfig::efficiency_default")]
    pub model: ModelConfig,
    #[serde(default = "default_variant")]
    pub variant: VariantKind,
    #[serde(default)]
    pub lowrank: Option<LowRankConfig>,
    #[serde(default)]
    pub linformer: Option<LinformerConfig>,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dtype: Dtype,
}

fn default_variant() -> VariantKind {
    VariantKind::Transformer
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::efficiency_default(),
            variant: default_variant(),
            lowrank: None,
            linformer: None,
            bench: BenchSection::default(),
            train: TrainConfig::default(),
            seed: 0,
            dtype: Dtype::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults when absent), applies `GFL_SEED` and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(l) = &self.lowrank {
            LowRankConfig::new(l.r)?;
        }
        if let Some(l) = &self.linformer {
            l.validate()?;
        }
        match self.variant {
            VariantKind::Lrt if self.lowrank.is_none() => bail!("variant \"lrt\" needs a `lowrank` section"),
            VariantKind::Linformer if self.linformer.is_none() => bail!("variant \"linformer\" needs a `linformer` section"),
            _ => {}
        }
        if self.bench.seq_lens.contains(&0) {
            bail!("bench.seq_lens must be positive");
        }
        self.bench_options().validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            runs: self.bench.runs,
            warmup: self.bench.warmup,
            seed: self.seed,
            batch: self.bench.batch,
            dtype: self.dtype,
        }
    }

    /// The configured variant.
    pub fn variant_spec(&self) -> Result<VariantSpec> {
        Ok(match self.variant {
            VariantKind::Transformer => VariantSpec::transformer(self.model)?,
            VariantKind::Lrt => VariantSpec::lrt(self.model, self.lowrank.expect("validated").r)?,
            VariantKind::Linformer => {
                let l = self.linformer.expect("validated");
                VariantSpec::linformer(self.model, l.k, l.n_max)?
            }
        })
    }
}
