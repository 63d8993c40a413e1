mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use greenformers::bench::{run_benchmark, run_sweep, BenchMode, BenchOptions, SweepGrid};
use greenformers::blocks::{count_params, init_stack_params};
use greenformers::costmodel::{attention_core_macs, macs_forward, validate_against_instrumentation};
use greenformers::estimator::{overall_efficiency, scaled_costs, EfficiencyTable, Segment};
use greenformers::toytrain::{make_synthetic, train, DatasetSpec, EpochMetrics, TrainConfig};
use greenformers::{
    BaselineCost, ClassifierModel, Dtype, ModelConfig, ParamStore, PretrainSchedule, VariantKind, VariantSpec,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn base768() -> ModelConfig {
    ModelConfig::efficiency_default()
}

fn gradient_suite_check() -> Check {
    let start = Instant::now();
    let entries = gradient_suite(GRAD_SEEDS);
    let elapsed = start.elapsed().as_secs_f64();
    let worst = entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    for e in &entries {
        ensure(e.max_rel_err < GRAD_TOL, format!("{} has relative error {:.2e} at {}", e.name, e.max_rel_err, e.worst_param))?;
    }
    ensure(elapsed < 60.0, format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "{} layer checks x {GRAD_SEEDS} seeds, worst {:.2e} ({}), {elapsed:.1} s",
        entries.len(),
        worst.max_rel_err,
        worst.name
    ))
}

fn reductions_check() -> Check {
    let mut worst = [0.0f64; 3];
    for seed in 0..5 {
        worst[0] = worst[0].max(lrmha_identity_gap(seed));
        worst[1] = worst[1].max(linformer_identity_gap(seed));
        worst[2] = worst[2].max(led_materialized_gap(seed));
    }
    for (name, gap) in ["LRMHA", "Linformer", "LED"].iter().zip(worst) {
        ensure(gap < 1e-12, format!("{name} gap {gap:.2e}"))?;
    }
    Ok(format!("max |diff|: LRMHA {:.1e}, Linformer {:.1e}, LED {:.1e}", worst[0], worst[1], worst[2]))
}

fn param_accounting_check() -> Check {
    let mut checked = 0;
    for kind in VariantKind::ALL {
        for rank in [1, 32, 64, 256] {
            let spec = VariantSpec::of_kind(kind, base768(), rank, 512).map_err(|e| e.to_string())?;
            let mut store = ParamStore::<f32>::new(0);
            init_stack_params(&mut store, &spec).map_err(|e| e.to_string())?;
            let counted = count_params(&spec, None).total;
            ensure(counted == store.total_count(), format!("{kind} r={rank}: {counted} vs {}", store.total_count()))?;
            checked += 1;
        }
    }
    let layer = ModelConfig::new(768, 12, 3072, 1, 0).map_err(|e| e.to_string())?;
    let dense = count_params(&VariantSpec::transformer(layer).unwrap(), None).weights_only();
    let lrt = count_params(&VariantSpec::lrt(layer, 64).unwrap(), None).weights_only();
    ensure(dense == 8 * lrt, format!("layer ratio {dense}/{lrt} is not 8"))?;
    Ok(format!("{checked} stores match exactly; layer weights {dense} / {lrt} = 8.0"))
}

fn linformer_size_check() -> Check {
    let n_max = 512;
    let base = count_params(&VariantSpec::transformer(base768()).unwrap(), None).total;
    for k in 1..=n_max {
        let lin = count_params(&VariantSpec::linformer(base768(), k, n_max).unwrap(), None).total;
        ensure(lin > base, format!("k={k}: {lin} <= {base}"))?;
    }
    Ok(format!("all k in 1..={n_max} exceed the transformer's {base} parameters"))
}

fn cost_oracle_check() -> Check {
    let configs = [
        (ModelConfig::new(32, 2, 64, 1, 0).unwrap(), 7),
        (ModelConfig::new(16, 4, 24, 2, 0).unwrap(), 5),
        (ModelConfig::new(24, 3, 40, 1, 1).unwrap(), 9),
        (base768(), 32),
    ];
    let mut runs = 0;
    for (c, n) in configs {
        for kind in VariantKind::ALL {
            let c = if kind == VariantKind::Linformer {
                ModelConfig { n_dec_layers: 0, ..c }
            } else {
                c
            };
            let spec = VariantSpec::of_kind(kind, c, 4, n).map_err(|e| e.to_string())?;
            let r = validate_against_instrumentation(&spec, n).map_err(|e| format!("{kind}: {e}"))?;
            ensure(r.analytic == r.measured, format!("{kind}: {} vs {}", r.analytic, r.measured))?;
            runs += 1;
        }
    }
    let dense = attention_core_macs(&VariantSpec::transformer(base768()).unwrap(), 128).unwrap();
    let lin = attention_core_macs(&VariantSpec::linformer(base768(), 64, 128).unwrap(), 128).unwrap();
    ensure(dense == 25_165_824 && lin == 25_165_824, format!("crossover terms {dense} and {lin}"))?;
    Ok(format!("{runs} instrumented forwards match exactly; n=128, k=64 attention both {dense}"))
}

fn complexity_check() -> Check {
    let mut parts = Vec::new();
    for kind in VariantKind::ALL {
        let spec = VariantSpec::of_kind(kind, base768(), 64, 256).unwrap();
        let m: Vec<i128> = [64, 128, 192, 256].iter().map(|&n| macs_forward(&spec, n).unwrap() as i128).collect();
        let d2 = [m[2] - 2 * m[1] + m[0], m[3] - 2 * m[2] + m[1]];
        match kind {
            VariantKind::Linformer => ensure(d2 == [0, 0], format!("{kind} second differences {d2:?}"))?,
            _ => ensure(d2[0] == d2[1] && d2[0] > 0, format!("{kind} second differences {d2:?}"))?,
        }
        parts.push(format!("{kind} {}", d2[0]));
    }
    Ok(format!("second differences: {}", parts.join(", ")))
}

fn estimator_check() -> Check {
    let sched = PretrainSchedule::bert();
    let mut ones = EfficiencyTable::default();
    let mut pair = EfficiencyTable::default();
    for (k, e) in [(128, 2.8), (512, 1.1)] {
        ones.insert(k, 32, 1.0).unwrap();
        pair.insert(k, 32, e).unwrap();
    }
    ensure(overall_efficiency(&sched, &ones, 32).unwrap() == 1.0, "unit factors")?;
    let eff = overall_efficiency(&sched, &pair, 32).unwrap();
    ensure((eff - 2.63).abs() < 1e-12, format!("weighted mean {eff}"))?;
    let single = PretrainSchedule::new(vec![Segment {
        seq_len: 128,
        fraction: 1.0,
    }])
    .unwrap();
    ensure(overall_efficiency(&single, &pair, 32).unwrap() == 2.8, "single segment")?;
    let mut shifted = pair.clone();
    shifted.insert(512, 32, 1.6).unwrap();
    let delta = overall_efficiency(&sched, &shifted, 32).unwrap() - eff;
    ensure((delta - 0.05).abs() < 1e-12, format!("linearity delta {delta}"))?;

    let base = BaselineCost::bert_base();
    let table = [
        (1.48, [1.52, 1406.0, 4686.0, 442.2]),
        (1.98, [1.13, 1045.0, 3484.0, 328.8]),
        (2.50, [0.90, 831.0, 2768.0, 261.2]),
        (2.63, [0.85, 789.0, 2629.0, 248.1]),
    ];
    let mut worst: f64 = 0.0;
    for (eff, cells) in table {
        let c = scaled_costs(&base, eff).unwrap();
        for (got, want) in [c.compute_pfs_day, c.usd_low, c.usd_high, c.co2_kg].into_iter().zip(cells) {
            worst = worst.max((got - want).abs() / want);
        }
    }
    ensure(worst < 0.01, format!("worst relative error {:.3}%", worst * 100.0))?;
    Ok(format!("identities exact; 12 cost cells within {:.2}%", worst * 100.0))
}

struct TrainingRun {
    kind: VariantKind,
    history: Vec<EpochMetrics>,
}

fn effectiveness_setup() -> (greenformers::toytrain::SplitDataset, ModelConfig, TrainConfig) {
    let data = make_synthetic(&DatasetSpec::synthetic(4, 32, 4000, 1000, 1)).unwrap();
    let c = ModelConfig::new(64, 4, 128, 2, 0).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 64,
        learning_rate: 1e-3,
        target_accuracy: Some(0.95),
        seed: 1,
        ..TrainConfig::default()
    };
    (data, c, tc)
}

fn effectiveness_spec(kind: VariantKind, c: ModelConfig) -> VariantSpec {
    VariantSpec::of_kind(kind, c, c.d_model / 4, 33).unwrap()
}

fn effectiveness_check(runs: &mut Vec<TrainingRun>) -> Check {
    let (data, c, tc) = effectiveness_setup();
    let mut parts = Vec::new();
    for kind in VariantKind::ALL {
        let spec = effectiveness_spec(kind, c);
        let model = ClassifierModel::new(spec, data.classifier_shape()).unwrap();
        let start = Instant::now();
        let out = train::<f32>(&model, &data, &tc).map_err(|e| format!("{kind}: {e}"))?;
        let secs = start.elapsed().as_secs_f64();
        ensure(out.best_test_accuracy >= 0.95, format!("{kind} best test accuracy {:.3}", out.best_test_accuracy))?;
        ensure(secs < 300.0, format!("{kind} took {secs:.0} s"))?;
        parts.push(format!("{kind} {:.1}% in {} ep/{secs:.0} s", out.best_test_accuracy * 100.0, out.best_epoch));
        runs.push(TrainingRun {
            kind,
            history: out.history,
        });
    }
    let dense = count_params(&effectiveness_spec(VariantKind::Transformer, c), None).weights_only();
    let lrt = count_params(&effectiveness_spec(VariantKind::Lrt, c), None).weights_only();
    let saving = 1.0 - lrt as f64 / dense as f64;
    ensure(saving >= 0.30, format!("LRT saves only {:.1}% of encoder weights", saving * 100.0))?;
    parts.push(format!("LRT r=16 uses {:.0}% fewer encoder weights", saving * 100.0));
    parts.push(mnist_slow_path()?);
    Ok(parts.join("; "))
}

/// 14×14 MNIST, run only when `GFL_MNIST_DIR` points at the IDX files.
fn mnist_slow_path() -> Check {
    let Ok(dir) = std::env::var("GFL_MNIST_DIR") else {
        return Ok("MNIST path skipped (GFL_MNIST_DIR unset)".into());
    };
    let spec = DatasetSpec {
        kind: greenformers::toytrain::DatasetKind::Mnist {
            idx_dir: dir.into(),
            downsample_factor: 2,
            max_train: None,
            max_test: None,
        },
        seed: 0,
    };
    let data = spec.load().map_err(|e| format!("MNIST: {e}"))?;
    let c = ModelConfig::new(64, 4, 128, 2, 0).unwrap();
    let tc = TrainConfig {
        epochs: 20,
        patience: Some(3),
        seed: 1,
        ..TrainConfig::default()
    };
    let mut acc = Vec::new();
    for kind in VariantKind::ALL {
        let spec = VariantSpec::of_kind(kind, c, 16, data.seq_len + 1).unwrap();
        let model = ClassifierModel::new(spec, data.classifier_shape()).unwrap();
        let out = train::<f32>(&model, &data, &tc).map_err(|e| format!("MNIST {kind}: {e}"))?;
        ensure(out.best_test_accuracy >= 0.90, format!("MNIST {kind} test accuracy {:.3}", out.best_test_accuracy))?;
        acc.push(out.best_test_accuracy);
    }
    ensure(acc[0] - acc[1] <= 0.015, format!("MNIST LRT trails by {:.2} points", (acc[0] - acc[1]) * 100.0))?;
    Ok(format!("MNIST 14x14 test accuracy {:.1}/{:.1}/{:.1}%", acc[0] * 100.0, acc[1] * 100.0, acc[2] * 100.0))
}

fn timing_check() -> Check {
    let c = ModelConfig::new(64, 4, 128, 1, 0).unwrap();
    let opts = BenchOptions {
        runs: 30,
        warmup: 3,
        seed: 0,
        batch: 1,
        dtype: Dtype::F32,
    };
    let bench = |spec: VariantSpec, n| run_benchmark(&spec, n, BenchMode::Fwd, &opts).map_err(|e| e.to_string());
    // Cold caches and frequency ramp-up skew the very first timed sweep.
    bench(VariantSpec::transformer(c).unwrap(), 256)?;
    let mut speedups = Vec::new();
    let mut self_ratio = 0.0;
    for n in [256, 2048] {
        let base = bench(VariantSpec::transformer(c).unwrap(), n)?;
        if n == 256 {
            let again = bench(VariantSpec::transformer(c).unwrap(), n)?;
            self_ratio = base.time_ms_mean / again.time_ms_mean;
        }
        let mut lin = bench(VariantSpec::linformer(c, 64, n).unwrap(), n)?;
        lin.compare_to(&base);
        speedups.push(lin.speedup_vs_baseline);
    }
    ensure((0.8..=1.25).contains(&self_ratio), format!("self ratio {self_ratio:.3}"))?;
    ensure(speedups[1] > speedups[0], format!("Linformer speedup {:.2} at 2048 vs {:.2} at 256", speedups[1], speedups[0]))?;
    Ok(format!(
        "Linformer speedup {:.2}x at n=256 -> {:.2}x at n=2048; self ratio {self_ratio:.3}",
        speedups[0], speedups[1]
    ))
}

fn determinism_check(runs: &[TrainingRun]) -> Check {
    let grid = SweepGrid {
        cfg: ModelConfig::new(16, 2, 32, 1, 0).unwrap(),
        variants: VariantKind::ALL.to_vec(),
        seq_lens: vec![8, 16],
        ranks: vec![4, 8],
        mode: BenchMode::FwdBwd,
        options: BenchOptions {
            runs: 2,
            warmup: 0,
            ..BenchOptions::default()
        },
    };
    let key = |g: &SweepGrid| -> Result<Vec<String>, String> {
        Ok(run_sweep(g).map_err(|e| e.to_string())?.rows.iter().map(|r| r.non_timing_key()).collect())
    };
    let rows = key(&grid)?;
    ensure(rows == key(&grid)?, "sweep non-timing columns differ between runs")?;

    let first = runs.iter().find(|r| r.kind == VariantKind::Lrt).ok_or("no LRT training run to compare against")?;
    let (data, c, tc) = effectiveness_setup();
    let model = ClassifierModel::new(effectiveness_spec(VariantKind::Lrt, c), data.classifier_shape()).unwrap();
    let again = train::<f32>(&model, &data, &tc).map_err(|e| e.to_string())?;
    ensure(again.history == first.history, "LRT metric history differs between runs")?;
    Ok(format!("{} sweep rows and {} metric records bit-identical", rows.len(), first.history.len()))
}

fn report(id: usize, title: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  criterion {id:>2}  {title}: {detail} [{secs:.1} s]");
            true
        }
        Err(detail) => {
            println!("FAIL  criterion {id:>2}  {title}: {detail} [{secs:.1} s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut runs = Vec::new();
    let results = [
        report(1, "gradient suite", gradient_suite_check),
        report(2, "reduction equivalences", reductions_check),
        report(3, "parameter accounting", param_accounting_check),
        report(4, "Linformer size monotonicity", linformer_size_check),
        report(5, "cost-model oracle", cost_oracle_check),
        report(6, "complexity shape", complexity_check),
        report(7, "estimator", estimator_check),
        report(8, "effectiveness at desk scale", || effectiveness_check(&mut runs)),
        report(9, "timing trend", timing_check),
        report(10, "determinism", || determinism_check(&runs)),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
