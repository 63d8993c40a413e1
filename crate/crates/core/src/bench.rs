//! Wall-clock benchmark harness and variant sweeps.
//!
//! Every cell builds one model and one random input from the seed, runs
//! `warmup` untimed iterations, then `runs` timed ones on a monotonic clock.
//! The memory columns come from the analytic cost model.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::ModelConfig;
use crate::blocks::{init_stack_params, stack_forward, VariantKind, VariantSpec};
use crate::costmodel::cost_report;
use crate::error::{Error, Result};
use crate::numcore::{backward, Dtype, ParamStore, Real, Tape, Tensor};

pub const CSV_HEADER: [&str; 14] = [
    "variant",
    "n",
    "rank",
    "mode",
    "runs",
    "params",
    "macs_fwd",
    "mem_infer_bytes",
    "mem_train_bytes",
    "time_ms_mean",
    "time_ms_std",
    "speedup_vs_baseline",
    "mem_ratio_pct",
    "error",
];

pub const RATIO_CSV_HEADER: [&str; 4] = ["n", "rank", "log2_speedup_linformer_over_lrt", "log2_mem_lrt_over_linformer"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    #[default]
    Fwd,
    FwdBwd,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Fwd => "fwd",
            BenchMode::FwdBwd => "fwd_bwd",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fwd" => Ok(BenchMode::Fwd),
            "fwd_bwd" => Ok(BenchMode::FwdBwd),
            other => Err(Error::Config(format!("unknown bench mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    pub batch: usize,
    pub dtype: Dtype,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: 30,
            warmup: 3,
            seed: 0,
            batch: 1,
            dtype: Dtype::F32,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub variant: VariantKind,
    pub n: usize,
    pub rank: usize,
    pub mode: BenchMode,
    pub runs: usize,
    pub params: u64,
    pub macs_fwd: u64,
    pub mem_infer_bytes: u64,
    pub mem_train_bytes: u64,
    pub time_ms_mean: f64,
    pub time_ms_std: f64,
    /// Per-run wall times in milliseconds.
    pub samples_ms: Vec<f64>,
    pub speedup_vs_baseline: f64,
    pub mem_ratio_pct: f64,
    /// Sum of the forward output, identical across runs.
    pub checksum: f64,
}

impl BenchResult {
    /// Memory figure compared across variants for this mode.
    pub fn mem_bytes(&self) -> u64 {
        match self.mode {
            BenchMode::Fwd => self.mem_infer_bytes,
            BenchMode::FwdBwd => self.mem_train_bytes,
        }
    }

    /// Fills the ratio columns against `baseline`.
    pub fn compare_to(&mut self, baseline: &BenchResult) {
        self.speedup_vs_baseline = baseline.time_ms_mean / self.time_ms_mean;
        self.mem_ratio_pct = 100.0 * self.mem_bytes() as f64 / baseline.mem_bytes() as f64;
    }
}

/// Mean and sample standard deviation; the deviation of a single sample is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `runs` executions of one variant at length `n`.
///
/// Ratio columns are left at 1.0 and 100%; [`BenchResult::compare_to`] fills them.
pub fn run_benchmark(spec: &VariantSpec, n: usize, mode: BenchMode, opts: &BenchOptions) -> Result<BenchResult> {
    opts.validate()?;
    spec.validate()?;
    let cost = cost_report(spec, n, opts.dtype.bytes(), opts.batch)?;
    let (samples_ms, checksum) = match opts.dtype {
        Dtype::F32 => time_runs::<f32>(spec, n, mode, opts)?,
        Dtype::F64 => time_runs::<f64>(spec, n, mode, opts)?,
    };
    let (time_ms_mean, time_ms_std) = mean_std(&samples_ms);
    Ok(BenchResult {
        variant: spec.kind(),
        n,
        rank: cost.rank,
        mode,
        runs: opts.runs,
        params: cost.params,
        macs_fwd: cost.macs_fwd,
        mem_infer_bytes: cost.mem_infer_bytes,
        mem_train_bytes: cost.mem_train_bytes,
        time_ms_mean,
        time_ms_std,
        samples_ms,
        speedup_vs_baseline: 1.0,
        mem_ratio_pct: 100.0,
        checksum,
    })
}

fn time_runs<T: Real>(spec: &VariantSpec, n: usize, mode: BenchMode, opts: &BenchOptions) -> Result<(Vec<f64>, f64)> {
    let mut store = ParamStore::<T>::new(opts.seed);
    init_stack_params(&mut store, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let input = Tensor::<T>::randn([opts.batch, n, spec.cfg.d_model], &mut rng);
    let mut reference: Option<Vec<T>> = None;
    let mut samples = Vec::with_capacity(opts.runs);
    for i in 0..opts.warmup + opts.runs {
        let start = Instant::now();
        let out = match mode {
            BenchMode::Fwd => {
                let tape = Tape::disabled();
                let x = tape.constant(input.clone());
                stack_forward(&tape, &store, &x, spec)?.into_tensor()
            }
            BenchMode::FwdBwd => {
                let tape = Tape::new();
                let x = tape.constant(input.clone());
                let y = stack_forward(&tape, &store, &x, spec)?;
                let loss = tape.mean(&y)?;
                store.zero_grad();
                backward(&tape, &loss, &mut store)?;
                y.into_tensor()
            }
        };
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i >= opts.warmup {
            samples.push(elapsed);
        }
        match &reference {
            None => reference = Some(out.into_data()),
            Some(r) if r.as_slice() != out.data() => {
                return Err(Error::Validation(format!("run {i} produced a different output than run 0")));
            }
            Some(_) => {}
        }
    }
    let checksum = reference.unwrap_or_default().iter().map(|x| x.as_f64()).sum();
    Ok((samples, checksum))
}

/// Variants × lengths × ranks to benchmark. The transformer at each length is
/// the baseline; Linformer projections are sized for the cell's own length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub cfg: ModelConfig,
    pub variants: Vec<VariantKind>,
    pub seq_lens: Vec<usize>,
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub mode: BenchMode,
    #[serde(default)]
    pub options: BenchOptions,
}

impl SweepGrid {
    /// Cells in sweep order: per length, the baseline first, then each rank.
    pub fn cells(&self) -> Vec<(VariantKind, usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.seq_lens {
            out.push((VariantKind::Transformer, n, 0));
            for &r in &self.ranks {
                for &v in &self.variants {
                    if v != VariantKind::Transformer {
                        out.push((v, n, r));
                    }
                }
            }
        }
        out
    }
}

/// One CSV row; numeric fields are empty when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: VariantKind,
    pub n: usize,
    pub rank: usize,
    pub mode: BenchMode,
    pub runs: usize,
    pub params: Option<u64>,
    pub macs_fwd: Option<u64>,
    pub mem_infer_bytes: Option<u64>,
    pub mem_train_bytes: Option<u64>,
    pub time_ms_mean: Option<f64>,
    pub time_ms_std: Option<f64>,
    pub speedup_vs_baseline: Option<f64>,
    pub mem_ratio_pct: Option<f64>,
    pub error: String,
}

impl SweepRow {
    fn ok(r: &BenchResult) -> Self {
        SweepRow {
            variant: r.variant,
            n: r.n,
            rank: r.rank,
            mode: r.mode,
            runs: r.runs,
            params: Some(r.params),
            macs_fwd: Some(r.macs_fwd),
            mem_infer_bytes: Some(r.mem_infer_bytes),
            mem_train_bytes: Some(r.mem_train_bytes),
            time_ms_mean: Some(r.time_ms_mean),
            time_ms_std: Some(r.time_ms_std),
            speedup_vs_baseline: Some(r.speedup_vs_baseline),
            mem_ratio_pct: Some(r.mem_ratio_pct),
            error: String::new(),
        }
    }

    fn failed(variant: VariantKind, n: usize, rank: usize, mode: BenchMode, runs: usize, err: &Error) -> Self {
        SweepRow {
            variant,
            n,
            rank,
            mode,
            runs,
            params: None,
            macs_fwd: None,
            mem_infer_bytes: None,
            mem_train_bytes: None,
            time_ms_mean: None,
            time_ms_std: None,
            speedup_vs_baseline: None,
            mem_ratio_pct: None,
            error: err.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    /// Columns that do not depend on timing.
    pub fn non_timing_key(&self) -> String {
        format!(
            "{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{}",
            self.variant,
            self.n,
            self.rank,
            self.mode,
            self.runs,
            self.params,
            self.macs_fwd,
            self.mem_infer_bytes,
            self.mem_train_bytes,
            self.mem_ratio_pct,
            self.error
        )
    }
}

/// LRT against Linformer at one (length, rank); negative values favour LRT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub rank: usize,
    pub log2_speedup_linformer_over_lrt: f64,
    pub log2_mem_lrt_over_linformer: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub ratios: Vec<RatioRow>,
}

pub fn spec_for(kind: VariantKind, cfg: ModelConfig, n: usize, rank: usize) -> Result<VariantSpec> {
    VariantSpec::of_kind(kind, cfg, rank, n)
}

/// Runs every cell of `grid` sequentially. Failing cells become rows with an
/// error message; the sweep continues.
pub fn run_sweep(grid: &SweepGrid) -> Result<SweepReport> {
    grid.options.validate()?;
    grid.cfg.validate()?;
    let mode = grid.mode;
    let runs = grid.options.runs;
    let mut report = SweepReport::default();
    let mut baseline: Option<BenchResult> = None;
    for (kind, n, rank) in grid.cells() {
        let outcome = spec_for(kind, grid.cfg, n, rank).and_then(|s| run_benchmark(&s, n, mode, &grid.options));
        let row = match outcome {
            Ok(mut r) => {
                if kind == VariantKind::Transformer {
                    baseline = Some(r.clone());
                    SweepRow::ok(&r)
                } else {
                    match baseline.as_ref().filter(|b| b.n == n) {
                        Some(b) => {
                            r.compare_to(b);
                            SweepRow::ok(&r)
                        }
                        None => {
                            let mut row = SweepRow::ok(&r);
                            row.speedup_vs_baseline = None;
                            row.mem_ratio_pct = None;
                            row.error = format!("no baseline at n={n}");
                            row
                        }
                    }
                }
            }
            Err(e) => {
                if kind == VariantKind::Transformer {
                    baseline = None;
                }
                SweepRow::failed(kind, n, rank, mode, runs, &e)
            }
        };
        report.rows.push(row);
    }
    report.ratios = ratio_rows(&report.rows);
    Ok(report)
}

fn ratio_rows(rows: &[SweepRow]) -> Vec<RatioRow> {
    let find = |kind, n, rank| rows.iter().find(|r| r.variant == kind && r.n == n && r.rank == rank && r.is_ok());
    let mut out = Vec::new();
    for lrt in rows.iter().filter(|r| r.variant == VariantKind::Lrt && r.is_ok()) {
        if let Some(lin) = find(VariantKind::Linformer, lrt.n, lrt.rank) {
            let (Some(s_lrt), Some(s_lin)) = (lrt.speedup_vs_baseline, lin.speedup_vs_baseline) else {
                continue;
            };
            let (Some(m_lrt), Some(m_lin)) = (lrt.mem_ratio_pct, lin.mem_ratio_pct) else {
                continue;
            };
            out.push(RatioRow {
                n: lrt.n,
                rank: lrt.rank,
                log2_speedup_linformer_over_lrt: (s_lin / s_lrt).log2(),
                log2_mem_lrt_over_linformer: (m_lrt / m_lin).log2(),
            });
        }
    }
    out
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ratios<W: Write>(rows: &[RatioRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RATIO_CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format {
            kind: "bench csv",
            detail: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Path of the LRT-vs-Linformer ratio table written next to `out`.
pub fn ratio_path(out: &Path) -> std::path::PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "bench".into());
    out.with_file_name(format!("{stem}.ratios.csv"))
}

/// Runs the sweep and writes the main table to `out` and the ratio table
/// beside it.
pub fn sweep(grid: &SweepGrid, out: &Path) -> Result<SweepReport> {
    let report = run_sweep(grid)?;
    write_rows(&report.rows, std::fs::File::create(out)?)?;
    write_ratios(&report.ratios, std::fs::File::create(ratio_path(out))?)?;
    Ok(report)
}
