//! Self-check run by `gfl validate`.

use anyhow::{ensure, Result};
use greenformers::blocks::{count_params, init_stack_params};
use greenformers::costmodel::{compare_breakdowns, mac_breakdown, macs_forward, measure_breakdown};
use greenformers::estimator::scaled_costs;
use greenformers::numcore::gradcheck;
use greenformers::{BaselineCost, ClassifierModel, ClassifierShape, ModelConfig, ParamStore, VariantKind, VariantSpec};

/// Perturbations for exercising the failure path.
#[derive(Clone, Copy, Debug, Default)]
pub struct Faults {
    /// Adds one MAC to the first analytic component.
    pub analytic_off_by_one: bool,
}

fn mac_configs() -> Vec<(ModelConfig, usize)> {
    vec![
        (ModelConfig::new(32, 2, 64, 1, 0).unwrap(), 7),
        (ModelConfig::new(16, 4, 24, 2, 0).unwrap(), 5),
        (ModelConfig::new(24, 3, 40, 1, 1).unwrap(), 9),
    ]
}

fn mac_instrumentation(faults: Faults) -> Result<String> {
    let mut checked = 0;
    for (cfg, n) in mac_configs() {
        for kind in VariantKind::ALL {
            let cfg = if kind == VariantKind::Linformer {
                ModelConfig { n_dec_layers: 0, ..cfg }
            } else {
                cfg
            };
            let spec = VariantSpec::of_kind(kind, cfg, 4, n)?;
            let mut analytic = mac_breakdown(&spec, n)?;
            if faults.analytic_off_by_one {
                analytic[0].macs += 1;
            }
            let measured = measure_breakdown(&spec, n, 0)?;
            compare_breakdowns(&analytic, &measured).map_err(|e| anyhow::anyhow!("{kind} d_model={} n={n}: {e}", cfg.d_model))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} instrumented forwards"))
}

fn param_accounting() -> Result<String> {
    let cfg = ModelConfig::new(128, 4, 512, 2, 1)?;
    let mut checked = 0;
    for kind in VariantKind::ALL {
        let cfg = if kind == VariantKind::Linformer {
            ModelConfig { n_dec_layers: 0, ..cfg }
        } else {
            cfg
        };
        for rank in [1, 16, 32, 64] {
            let spec = VariantSpec::of_kind(kind, cfg, rank, 64)?;
            let mut store = ParamStore::<f32>::new(0);
            init_stack_params(&mut store, &spec)?;
            let counted = count_params(&spec, None).total;
            ensure!(counted == store.total_count(), "{kind} r={rank}: counted {counted}, stored {}", store.total_count());
            checked += 1;
        }
    }
    let layer = ModelConfig::new(768, 12, 3072, 1, 0)?;
    let dense = count_params(&VariantSpec::transformer(layer)?, None).weights_only();
    let lrt = count_params(&VariantSpec::lrt(layer, 64)?, None).weights_only();
    ensure!(dense == 8 * lrt, "layer weights {dense} vs LRT r=64 {lrt}, expected an 8x ratio");
    Ok(format!("{checked} stores, 8x layer ratio"))
}

fn linformer_monotonic() -> Result<String> {
    let cfg = ModelConfig::efficiency_default();
    let base = count_params(&VariantSpec::transformer(cfg)?, None).total;
    for k in 1..=512 {
        let lin = count_params(&VariantSpec::linformer(cfg, k, 512)?, None).total;
        ensure!(lin > base, "Linformer k={k} has {lin} parameters, transformer {base}");
    }
    Ok("k in 1..=512".into())
}

fn complexity_shape() -> Result<String> {
    let cfg = ModelConfig::efficiency_default();
    for kind in VariantKind::ALL {
        let spec = VariantSpec::of_kind(kind, cfg, 64, 256)?;
        let m = [64, 128, 192, 256]
            .iter()
            .map(|&n| macs_forward(&spec, n).map(i128::from))
            .collect::<Result<Vec<_>, _>>()?;
        let d2 = [m[2] - 2 * m[1] + m[0], m[3] - 2 * m[2] + m[1]];
        let ok = match kind {
            VariantKind::Linformer => d2 == [0, 0],
            _ => d2[0] == d2[1] && d2[0] > 0,
        };
        ensure!(ok, "{kind} second differences {d2:?}");
    }
    Ok("n in {64, 128, 192, 256}".into())
}

fn estimator_table() -> Result<String> {
    let base = BaselineCost::bert_base();
    let table = [
        (1.48, [1.52, 1406.0, 4686.0, 442.2]),
        (1.98, [1.13, 1045.0, 3484.0, 328.8]),
        (2.50, [0.90, 831.0, 2768.0, 261.2]),
        (2.63, [0.85, 789.0, 2629.0, 248.1]),
    ];
    for (eff, want) in table {
        let c = scaled_costs(&base, eff)?;
        for (got, want) in [c.compute_pfs_day, c.usd_low, c.usd_high, c.co2_kg].into_iter().zip(want) {
            ensure!((got - want).abs() <= 0.01 * want, "Eff {eff}: {got} vs {want}");
        }
    }
    Ok("12 cells within 1%".into())
}

fn classifier_gradients() -> Result<String> {
    let cfg = ModelConfig::new(8, 2, 16, 1, 0)?;
    let shape = ClassifierShape {
        vocab: 6,
        max_len: 4,
        n_classes: 3,
    };
    let batch: [&[usize]; 2] = [&[0, 1, 2, 3], &[5, 4, 3, 3]];
    let labels = [1, 2];
    let mut worst: f64 = 0.0;
    for kind in VariantKind::ALL {
        let model = ClassifierModel::new(VariantSpec::of_kind(kind, cfg, 3, 5)?, shape)?;
        let mut store = model.init_params::<f64>(7)?;
        let head = store.get_mut("head.W").expect("classifier head");
        for (j, w) in head.data_mut().iter_mut().enumerate() {
            *w = 0.2 * (j as f64 * 1.618).sin();
        }
        let g = gradcheck::check(&store, 1e-5, 8, |t, p| {
            let logits = model.forward(t, p, &batch)?;
            t.cross_entropy(&logits, &labels)
        })?;
        ensure!(g.max_rel_err < 1e-5, "{kind} classifier gradient error {:.2e} at {}", g.max_rel_err, g.worst);
        worst = worst.max(g.max_rel_err);
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

/// Runs every check and prints one line each; true when all pass.
pub fn run(faults: Faults) -> bool {
    let checks: [(&str, Box<dyn Fn() -> Result<String>>); 6] = [
        ("MAC instrumentation", Box::new(move || mac_instrumentation(faults))),
        ("parameter accounting", Box::new(param_accounting)),
        ("Linformer size monotonicity", Box::new(linformer_monotonic)),
        ("complexity shape", Box::new(complexity_shape)),
        ("cost table", Box::new(estimator_table)),
        ("classifier gradients", Box::new(classifier_gradients)),
    ];
    let mut all = true;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("ok    {name}: {detail}"),
            Err(e) => {
                all = false;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
    all
}
