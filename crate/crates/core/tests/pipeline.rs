mod common;

use common::cfg;
use greenformers::bench::{read_rows, run_sweep, write_rows, BenchMode, BenchOptions, SweepGrid};
use greenformers::blocks::{count_params, load_model, save_model};
use greenformers::estimator::{estimate, scaled_costs, write_csv, EstimatorInput};
use greenformers::toytrain::{make_synthetic, train, DatasetSpec, Split, TrainConfig};
use greenformers::{BaselineCost, ClassifierModel, Dtype, ModelConfig, Tape, VariantKind, VariantSpec};

fn tiny_grid() -> SweepGrid {
    SweepGrid {
        cfg: cfg(16, 2, 32, 1, 0),
        variants: VariantKind::ALL.to_vec(),
        seq_lens: vec![8, 16],
        ranks: vec![4, 8],
        mode: BenchMode::FwdBwd,
        options: BenchOptions {
            runs: 2,
            warmup: 0,
            seed: 3,
            batch: 2,
            dtype: Dtype::F32,
        },
    }
}

#[test]
fn sweep_non_timing_columns_are_reproducible() {
    let a = run_sweep(&tiny_grid()).unwrap();
    let b = run_sweep(&tiny_grid()).unwrap();
    let keys = |r: &greenformers::bench::SweepReport| r.rows.iter().map(|x| x.non_timing_key()).collect::<Vec<_>>();
    assert_eq!(keys(&a), keys(&b));
    assert!(a.rows.iter().all(|r| r.is_ok()));
    for row in a.rows.iter().filter(|r| r.variant == VariantKind::Transformer) {
        assert_eq!(row.speedup_vs_baseline, Some(1.0));
    }
    let mut buf = Vec::new();
    write_rows(&a.rows, &mut buf).unwrap();
    assert_eq!(read_rows(buf.as_slice()).unwrap(), a.rows);
}

#[test]
fn base_grid_lrt_is_always_smaller() {
    let c = ModelConfig::efficiency_default();
    for n in [128, 256, 512, 1024, 2048] {
        let base = count_params(&VariantSpec::transformer(c).unwrap(), None).total;
        for r in [32, 64, 128, 256] {
            let lrt = count_params(&VariantSpec::lrt(c, r).unwrap(), None).total;
            assert!(lrt < base, "n={n} r={r}");
        }
    }
}

#[test]
fn cost_table_reproduced_within_one_percent() {
    let base = BaselineCost::bert_base();
    let expected = [
        (1.48, 1.52, 1406.0, 4686.0, 442.2),
        (1.98, 1.13, 1045.0, 3484.0, 328.8),
        (2.50, 0.90, 831.0, 2768.0, 261.2),
        (2.63, 0.85, 789.0, 2629.0, 248.1),
    ];
    for (eff, pfs, lo, hi, co2) in expected {
        let c = scaled_costs(&base, eff).unwrap();
        for (got, want) in [(c.compute_pfs_day, pfs), (c.usd_low, lo), (c.usd_high, hi), (c.co2_kg, co2)] {
            assert!((got - want).abs() / want < 0.01, "eff {eff}: {got} vs {want}");
        }
    }
}

#[test]
fn estimator_json_round_trip() {
    let doc = r#"{"overall": {"256": 1.48, "128": 1.98, "64": 2.50, "32": 2.63}}"#;
    let input: EstimatorInput = serde_json::from_str(doc).unwrap();
    let rows = estimate(&input).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1].rank, Some(256));
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
}

fn small_training() -> (ClassifierModel, greenformers::toytrain::SplitDataset, TrainConfig) {
    let data = make_synthetic(&DatasetSpec::synthetic(3, 12, 384, 96, 2)).unwrap();
    let spec = VariantSpec::lrt(cfg(16, 2, 32, 1, 0), 4).unwrap();
    let model = ClassifierModel::new(spec, data.classifier_shape()).unwrap();
    let tc = TrainConfig {
        epochs: 10,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    (model, data, tc)
}

#[test]
fn training_is_deterministic_and_improves() {
    let (model, data, tc) = small_training();
    let a = train::<f32>(&model, &data, &tc).unwrap();
    let b = train::<f32>(&model, &data, &tc).unwrap();
    assert_eq!(a.history, b.history);
    assert!((a.initial_loss - 3f64.ln()).abs() / 3f64.ln() < 0.15);
    let losses: Vec<f64> = a.history.iter().filter(|m| m.split == Split::Train).map(|m| m.loss).collect();
    let smoothed: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(smoothed.windows(2).all(|w| w[1] < w[0]), "{smoothed:?}");
    assert!(a.best_test_accuracy > 1.0 / 3.0);
}

#[test]
fn trained_model_survives_save_and_load() {
    let (model, data, tc) = small_training();
    let out = train::<f64>(&model, &data, &TrainConfig { epochs: 1, ..tc }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gfl");
    save_model(&path, &model, &out.best_params).unwrap();
    let (m2, p2) = load_model::<f64>(&path).unwrap();
    let batch: Vec<&[usize]> = data.test.inputs.iter().take(4).map(Vec::as_slice).collect();
    let t = Tape::disabled();
    let a = model.forward(&t, &out.best_params, &batch).unwrap();
    let b = m2.forward(&t, &p2, &batch).unwrap();
    assert_eq!(a.value(), b.value());
}
