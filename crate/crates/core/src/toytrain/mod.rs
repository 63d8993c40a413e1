//! Small-scale classifier training: synthetic and MNIST data, Adam, and
//! per-epoch metrics.

mod adam;
mod data;
mod mnist;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::ClassifierModel;
use crate::error::{Error, Result};
use crate::numcore::{backward, ParamStore, Real, Tape};

pub use adam::Adam;
pub use data::{majority_label, make_synthetic, Dataset, DatasetKind, DatasetSpec, SplitDataset, SyntheticTask, ALPHABET};
pub use mnist::{
    downsample, encode_idx_images, encode_idx_labels, load_mnist_idx, parse_idx_images, parse_idx_labels, IdxImages, IMAGES_MAGIC,
    LABELS_MAGIC, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop after this many epochs without a better test accuracy.
    pub patience: Option<usize>,
    /// Stop once test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: None,
            target_accuracy: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub history: Vec<EpochMetrics>,
    /// Loss of the first training batch before any update.
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    /// Parameters at the epoch with the best test accuracy.
    pub best_params: ParamStore<T>,
    pub final_params: ParamStore<T>,
}

impl<T> TrainOutcome<T> {
    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.history.iter().rev().find(|m| m.split == split)
    }

    pub fn epochs_run(&self) -> usize {
        self.history.last().map_or(0, |m| m.epoch)
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct<T: Real>(logits: &[T], labels: &[usize]) -> usize {
    let c = logits.len() / labels.len();
    labels.iter().enumerate().filter(|&(i, &l)| argmax(&logits[i * c..(i + 1) * c]) == l).count()
}

fn check_fits(model: &ClassifierModel, data: &SplitDataset) -> Result<()> {
    if model.shape.n_classes != data.n_classes {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            model.shape.n_classes, data.n_classes
        )));
    }
    if model.shape.vocab < data.vocab || model.shape.max_len < data.seq_len {
        return Err(Error::Config("model vocabulary or length is smaller than the dataset's".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Config("empty train or test split".into()));
    }
    Ok(())
}

/// Mean loss and accuracy over `data` without recording gradients.
pub fn evaluate<T: Real>(model: &ClassifierModel, params: &ParamStore<T>, data: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let batch: Vec<&[usize]> = data.inputs[start..end].iter().map(Vec::as_slice).collect();
        let labels = &data.labels[start..end];
        let tape = Tape::disabled();
        let logits = model.forward(&tape, params, &batch)?;
        let l = tape.cross_entropy(&logits, labels)?;
        loss += l.value().data()[0].as_f64() * labels.len() as f64;
        hits += correct(logits.value().data(), labels);
    }
    Ok((loss / data.len() as f64, hits as f64 / data.len() as f64))
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence {
            epoch,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train<T: Real>(model: &ClassifierModel, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let params = model.init_params::<T>(cfg.seed)?;
    train_from(model, params, data, cfg)
}

/// Trains `params` with Adam on mean cross-entropy, evaluating the test split
/// after each epoch.
pub fn train_from<T: Real>(model: &ClassifierModel, mut params: ParamStore<T>, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_fits(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::new();
    let mut initial_loss = None;
    let mut best = (0usize, f64::NEG_INFINITY, params.clone());
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| data.train.inputs[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            let tape = Tape::new();
            let logits = model.forward(&tape, &params, &batch).map_err(|e| diverged(e, epoch, step))?;
            let loss = tape.cross_entropy(&logits, &labels).map_err(|e| diverged(e, epoch, step))?;
            let l = loss.value().data()[0].as_f64();
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: l });
            }
            initial_loss.get_or_insert(l);
            loss_sum += l * labels.len() as f64;
            hits += correct(logits.value().data(), &labels);
            params.zero_grad();
            backward(&tape, &loss, &mut params).map_err(|e| diverged(e, epoch, step))?;
            drop(tape);
            adam.step(&mut params);
        }
        let n = data.train.len() as f64;
        history.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / n,
            accuracy: hits as f64 / n,
        });
        let (test_loss, test_acc) = evaluate(model, &params, &data.test).map_err(|e| diverged(e, epoch, step))?;
        history.push(EpochMetrics {
            epoch,
            split: Split::Test,
            loss: test_loss,
            accuracy: test_acc,
        });
        if test_acc > best.1 {
            best = (epoch, test_acc, params.clone());
        }
        if cfg.target_accuracy.is_some_and(|t| test_acc >= t) {
            break;
        }
        if cfg.patience.is_some_and(|p| epoch - best.0 >= p) {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        best_epoch: best.0,
        best_test_accuracy: best.1,
        best_params: best.2,
        final_params: params,
    })
}

pub const HISTORY_CSV_HEADER: [&str; 4] = ["epoch", "split", "loss", "accuracy"];

pub fn write_history_csv<W: Write>(history: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HISTORY_CSV_HEADER)?;
    for m in history {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
