use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use greenformers::bench::{ratio_path, sweep, BenchMode, SweepGrid};
use greenformers::blocks::{count_params, save_model};
use greenformers::estimator::{estimate, write_csv, EstimatorInput};
use greenformers::toytrain::{train, write_history_csv, SplitDataset, TrainOutcome};
use greenformers::{ClassifierModel, DatasetSpec, Dtype, Real, VariantKind, VariantSpec};
use serde::Deserialize;

use crate::config::RunConfig;

pub const SIZE_CSV_HEADER: [&str; 5] = ["variant", "rank", "params", "log2_rank", "log2_params"];

/// Default Linformer `n_max` for size reports when the config has none.
/// A row with `k` above it is sized for `k` tokens instead.
const SIZE_N_MAX: usize = 512;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Parses a comma-separated rank list; an empty string is an empty list.
pub fn parse_ranks(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<usize>() {
            Ok(0) | Err(_) => bail!("invalid rank {t:?}"),
            Ok(r) => Ok(r),
        })
        .collect()
}

pub fn size(cfg: &RunConfig, ranks: &[usize], out: &Path) -> Result<()> {
    let n_max = cfg.linformer.map_or(SIZE_N_MAX, |l| l.n_max);
    let mut w = create(out)?;
    writeln!(w, "{}", SIZE_CSV_HEADER.join(","))?;
    for &r in ranks {
        for kind in VariantKind::ALL {
            let spec = VariantSpec::of_kind(kind, cfg.model, r, n_max.max(r))?;
            let params = count_params(&spec, None).total;
            writeln!(w, "{kind},{r},{params},{:.6},{:.6}", (r as f64).log2(), (params as f64).log2())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sweep axes read from `--grid`; anything omitted comes from the run config.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default)]
    pub variants: Option<Vec<VariantKind>>,
    #[serde(default)]
    pub seq_lens: Option<Vec<usize>>,
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub mode: Option<BenchMode>,
}

pub fn bench(cfg: &RunConfig, grid_path: &Path, out: &Path) -> Result<()> {
    let g: GridFile = read_json(grid_path, "grid")?;
    let grid = SweepGrid {
        cfg: cfg.model,
        variants: g.variants.unwrap_or_else(|| VariantKind::ALL.to_vec()),
        seq_lens: g.seq_lens.unwrap_or_else(|| cfg.bench.seq_lens.clone()),
        ranks: g.ranks,
        mode: g.mode.unwrap_or(cfg.bench.mode),
        options: cfg.bench_options(),
    };
    let report = sweep(&grid, out)?;
    eprintln!("wrote {} rows to {} and ratios to {}", report.rows.len(), out.display(), ratio_path(out).display());
    let failed: Vec<_> = report.rows.iter().filter(|r| !r.is_ok()).collect();
    if !failed.is_empty() {
        for r in &failed {
            eprintln!("cell {} n={} rank={} failed: {}", r.variant, r.n, r.rank, r.error);
        }
        bail!("{} of {} cells failed", failed.len(), report.rows.len());
    }
    Ok(())
}

pub fn estimate_costs(input: &Path, out: &Path) -> Result<()> {
    let input: EstimatorInput = read_json(input, "estimator input")?;
    let rows = estimate(&input)?;
    let mut w = create(out)?;
    write_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn train_typed<T: Real>(model: &ClassifierModel, cfg: &RunConfig, data: &SplitDataset, out: &Path, save: Option<&Path>) -> Result<()> {
    let outcome: TrainOutcome<T> = train(model, data, &cfg.train)?;
    let mut w = create(out)?;
    write_history_csv(&outcome.history, &mut w)?;
    w.flush()?;
    if let Some(path) = save {
        save_model(path, model, &outcome.best_params)?;
    }
    eprintln!(
        "{} epochs, best test accuracy {:.4} at epoch {}",
        outcome.epochs_run(),
        outcome.best_test_accuracy,
        outcome.best_epoch
    );
    Ok(())
}

pub fn train_model(cfg: &RunConfig, dataset: &Path, out: &Path, save: Option<&Path>) -> Result<()> {
    let dataset: DatasetSpec = read_json(dataset, "dataset")?;
    let data = dataset.load()?;
    let model = ClassifierModel::new(cfg.variant_spec()?, data.classifier_shape())?;
    match cfg.dtype {
        Dtype::F32 => train_typed::<f32>(&model, cfg, &data, out, save),
        Dtype::F64 => train_typed::<f64>(&model, cfg, &data, out, save),
    }
}
