//! Transformer, low-rank transformer (LRT) and Linformer variants built on a
//! small deterministic tensor/autodiff core, with analytic parameter, MAC and
//! memory accounting that is checked against instrumented execution.

pub mod attention;
pub mod bench;
pub mod blocks;
pub mod costmodel;
pub mod error;
pub mod estimator;
pub mod numcore;
pub mod toytrain;

pub use error::{Error, Result};
pub use attention::{AttentionMask, LinformerConfig, LowRankConfig, ModelConfig};
pub use bench::{BenchMode, BenchOptions, BenchResult};
pub use blocks::{ClassifierModel, ClassifierShape, Variant, VariantKind, VariantSpec};
pub use costmodel::CostReport;
pub use estimator::{BaselineCost, EfficiencyTable, PretrainSchedule};
pub use numcore::{backward, Dtype, MacCounter, ParamStore, Real, Tape, Tensor, Var};
pub use toytrain::{DatasetSpec, TrainConfig};
