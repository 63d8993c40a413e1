use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::ClassifierShape;
use crate::error::{Error, Result};

/// Size of the synthetic token alphabet.
pub const ALPHABET: usize = 16;

/// Chance that a position is forced to the sample's intended class symbol.
const PLANT_PROB: f64 = 0.25;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub inputs: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub vocab: usize,
    pub seq_len: usize,
    pub n_classes: usize,
}

impl SplitDataset {
    pub fn classifier_shape(&self) -> ClassifierShape {
        ClassifierShape {
            vocab: self.vocab,
            max_len: self.seq_len,
            n_classes: self.n_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTask {
    #[default]
    MajorityToken,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetKind {
    Synthetic {
        #[serde(default)]
        task: SyntheticTask,
        n_classes: usize,
        seq_len: usize,
        n_train: usize,
        n_test: usize,
    },
    Mnist {
        idx_dir: std::path::PathBuf,
        #[serde(default = "default_downsample")]
        downsample_factor: usize,
        #[serde(default)]
        max_train: Option<usize>,
        #[serde(default)]
        max_test: Option<usize>,
    },
}

fn default_downsample() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn synthetic(n_classes: usize, seq_len: usize, n_train: usize, n_test: usize, seed: u64) -> Self {
        DatasetSpec {
            kind: DatasetKind::Synthetic {
                task: SyntheticTask::MajorityToken,
                n_classes,
                seq_len,
                n_train,
                n_test,
            },
            seed,
        }
    }

    pub fn load(&self) -> Result<SplitDataset> {
        match &self.kind {
            DatasetKind::Synthetic { .. } => make_synthetic(self),
            DatasetKind::Mnist {
                idx_dir,
                downsample_factor,
                max_train,
                max_test,
            } => {
                let mut d = super::mnist::load_mnist_idx(idx_dir, *downsample_factor)?;
                if let Some(m) = max_train {
                    d.train.inputs.truncate(*m);
                    d.train.labels.truncate(*m);
                }
                if let Some(m) = max_test {
                    d.test.inputs.truncate(*m);
                    d.test.labels.truncate(*m);
                }
                Ok(d)
            }
        }
    }
}

/// Most frequent symbol among `0..n_classes`; ties go to the smallest id.
/// Sequences holding none of those symbols get label 0.
pub fn majority_label(seq: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &t in seq {
        if t < n_classes {
            counts[t] += 1;
        }
    }
    let mut best = 0;
    for c in 1..n_classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// Class-balanced majority-token data.
///
/// Each sample picks a target class in round-robin order, plants it at random
/// positions on top of uniform noise, and is redrawn until the majority rule
/// agrees with the target. Class counts therefore differ by at most one.
pub fn make_synthetic(spec: &DatasetSpec) -> Result<SplitDataset> {
    let DatasetKind::Synthetic {
        task: SyntheticTask::MajorityToken,
        n_classes,
        seq_len,
        n_train,
        n_test,
    } = spec.kind
    else {
        return Err(Error::Config("not a synthetic dataset spec".into()));
    };
    if n_classes > ALPHABET {
        return Err(Error::Config(format!("n_classes = {n_classes} exceeds the alphabet size {ALPHABET}")));
    }
    if n_classes < 2 || seq_len == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::Config("synthetic dataset needs n_classes >= 2 and nonzero sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |count: usize| {
        let mut data = Dataset::default();
        for i in 0..count {
            let target = i % n_classes;
            let seq = loop {
                let s: Vec<usize> = (0..seq_len)
                    .map(|_| {
                        if rng.random_bool(PLANT_PROB) {
                            target
                        } else {
                            rng.random_range(0..ALPHABET)
                        }
                    })
                    .collect();
                if majority_label(&s, n_classes) == target {
                    break s;
                }
            };
            data.inputs.push(seq);
            data.labels.push(target);
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        Dataset {
            inputs: order.iter().map(|&i| data.inputs[i].clone()).collect(),
            labels: order.iter().map(|&i| data.labels[i]).collect(),
        }
    };
    let train = split(n_train);
    let test = split(n_test);
    Ok(SplitDataset {
        train,
        test,
        vocab: ALPHABET,
        seq_len,
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_rule_examples() {
        assert_eq!(majority_label(&[3, 3, 3, 3], 4), 3);
        assert_eq!(majority_label(&[5, 2, 5, 2, 9], 6), 2);
        assert_eq!(majority_label(&[2, 5, 5, 2], 6), 2);
        assert_eq!(majority_label(&[9, 9, 1, 9], 4), 1);
    }

    #[test]
    fn balanced_and_consistent() {
        let d = make_synthetic(&DatasetSpec::synthetic(4, 32, 1000, 10, 3)).unwrap();
        let counts = d.train.class_counts(4);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
        for (s, &l) in d.train.inputs.iter().zip(&d.train.labels) {
            assert_eq!(s.len(), 32);
            assert_eq!(majority_label(s, 4), l);
            assert!(s.iter().all(|&t| t < ALPHABET));
        }
    }

    #[test]
    fn reproducible_from_seed() {
        let spec = DatasetSpec::synthetic(3, 8, 50, 20, 9);
        assert_eq!(make_synthetic(&spec).unwrap(), make_synthetic(&spec).unwrap());
        let other = DatasetSpec::synthetic(3, 8, 50, 20, 10);
        assert_ne!(make_synthetic(&spec).unwrap().train, make_synthetic(&other).unwrap().train);
    }

    #[test]
    fn too_many_classes_rejected() {
        assert!(make_synthetic(&DatasetSpec::synthetic(17, 8, 10, 10, 0)).is_err());
    }

    #[test]
    fn spec_json() {
        let s: DatasetSpec = serde_json::from_str(
            r#"{"kind":"synthetic","n_classes":4,"seq_len":32,"n_train":10,"n_test":5,"seed":1}"#,
        )
        .unwrap();
        assert_eq!(s, DatasetSpec::synthetic(4, 32, 10, 5, 1));
        let m: DatasetSpec = serde_json::from_str(r#"{"kind":"mnist","idx_dir":"/data"}"#).unwrap();
        assert!(matches!(m.kind, DatasetKind::Mnist { downsample_factor: 2, .. }));
    }
}
