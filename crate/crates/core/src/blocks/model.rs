use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{count_params, encoder_forward, init_stack_params, ParamCount, VariantSpec};
use crate::attention::AttentionMask;
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Var};

/// Input vocabulary, maximum sequence length and class count of a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierShape {
    pub vocab: usize,
    pub max_len: usize,
    pub n_classes: usize,
}

/// Token embedding with an extra `[CLS]` row, learned positions, an encoder
/// stack, and a linear head read at position 0.
///
/// Parameters: `embed.tok.W` is `(vocab + 1) × d_model` where the last row is
/// `[CLS]`; `embed.pos.W` is `(max_len + 1) × d_model`; the head is
/// `head.W` (`d_model × n_classes`) and `head.b`, both zero at initialization
/// so untrained logits are uniform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub spec: VariantSpec,
    pub shape: ClassifierShape,
}

impl ClassifierModel {
    pub fn new(spec: VariantSpec, shape: ClassifierShape) -> Result<Self> {
        spec.validate()?;
        if shape.vocab == 0 || shape.max_len == 0 || shape.n_classes < 2 {
            return Err(Error::Config(format!("invalid classifier shape {shape:?}")));
        }
        if spec.cfg.n_dec_layers != 0 {
            return Err(Error::Config("the classifier is encoder-only; set n_dec_layers = 0".into()));
        }
        if let Some(lin) = spec.linformer_config() {
            if lin.n_max < shape.max_len + 1 {
                return Err(Error::Config(format!(
                    "Linformer n_max = {} cannot hold {} tokens plus [CLS]",
                    lin.n_max, shape.max_len
                )));
            }
        }
        Ok(ClassifierModel { spec, shape })
    }

    pub fn cls_id(&self) -> usize {
        self.shape.vocab
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let d = self.spec.cfg.d_model;
        let mut store = ParamStore::new(seed);
        store.insert_xavier("embed.tok.W", self.shape.vocab + 1, d)?;
        store.insert_xavier("embed.pos.W", self.shape.max_len + 1, d)?;
        init_stack_params(&mut store, &self.spec)?;
        store.insert_const("head.W", &[d, self.shape.n_classes], 0.0)?;
        store.insert_const("head.b", &[self.shape.n_classes], 0.0)?;
        Ok(store)
    }

    pub fn param_count(&self) -> ParamCount {
        count_params(&self.spec, Some(&self.shape))
    }

    /// Logits `[batch, n_classes]` for equal-length token sequences.
    pub fn forward<T: Real>(&self, tape: &Tape<T>, params: &ParamStore<T>, batch: &[&[usize]]) -> Result<Var<T>> {
        let b = batch.len();
        let n = batch.first().map(|s| s.len()).unwrap_or(0);
        if b == 0 || n == 0 {
            return Err(Error::shape("classifier", "empty batch or sequence"));
        }
        if n > self.shape.max_len {
            return Err(Error::SequenceLength {
                n,
                n_max: self.shape.max_len,
            });
        }
        let mut ids = Vec::with_capacity(b * (n + 1));
        for seq in batch {
            if seq.len() != n {
                return Err(Error::shape("classifier", "sequences in a batch must share one length"));
            }
            if let Some(&bad) = seq.iter().find(|&&t| t >= self.shape.vocab) {
                return Err(Error::shape("classifier", format!("token {bad} outside vocabulary")));
            }
            ids.push(self.cls_id());
            ids.extend_from_slice(seq);
        }
        let d = self.spec.cfg.d_model;
        let tok = tape.embedding(&tape.param(params, "embed.tok.W")?, &ids)?;
        let tok = tape.reshape(&tok, &[b, n + 1, d])?;
        let pos = tape.narrow(&tape.param(params, "embed.pos.W")?, 0, 0, n + 1)?;
        let x = tape.add_broadcast(&tok, &pos)?;
        let h = encoder_forward(tape, params, &x, &self.spec, &AttentionMask::None)?;
        let cls = tape.reshape(&tape.narrow(&h, 1, 0, 1)?, &[b, d])?;
        let logits = tape.matmul(&cls, &tape.param(params, "head.W")?)?;
        tape.add_broadcast(&logits, &tape.param(params, "head.b")?)
    }
}

/// JSON written next to a saved parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub model: ClassifierModel,
    pub dtype: String,
    pub seed: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `path` (parameter binary) and `path.json` (model description).
pub fn save_model<T: Real>(path: impl AsRef<Path>, model: &ClassifierModel, params: &ParamStore<T>) -> Result<()> {
    let path = path.as_ref();
    params.save(path)?;
    let sidecar = ModelSidecar {
        model: *model,
        dtype: T::NAME.to_string(),
        seed: params.seed(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<(ClassifierModel, ParamStore<T>)> {
    let path = path.as_ref();
    let sidecar: ModelSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    if sidecar.dtype != T::NAME {
        return Err(Error::Format {
            kind: "model sidecar",
            detail: format!("saved as {}, loading as {}", sidecar.dtype, T::NAME),
        });
    }
    let params = ParamStore::load(path, sidecar.seed)?;
    let expect = sidecar.model.init_params::<T>(sidecar.seed)?;
    for (name, p) in expect.iter() {
        if params.get(name)?.shape() != p.value().shape() {
            return Err(Error::Format {
                kind: "model file",
                detail: format!("`{name}` has the wrong shape"),
            });
        }
    }
    if params.len() != expect.len() {
        return Err(Error::Format {
            kind: "model file",
            detail: "unexpected extra parameters".into(),
        });
    }
    Ok((sidecar.model, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::ModelConfig;

    fn model(spec: VariantSpec) -> ClassifierModel {
        ClassifierModel::new(
            spec,
            ClassifierShape {
                vocab: 16,
                max_len: 6,
                n_classes: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn forward_shape_and_cls() {
        let cfg = ModelConfig::new(8, 2, 12, 2, 0).unwrap();
        let m = model(VariantSpec::transformer(cfg).unwrap());
        let p = m.init_params::<f64>(1).unwrap();
        let tape = Tape::disabled();
        let out = m.forward(&tape, &p, &[&[1, 2, 3], &[4, 5, 6]]).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert!(m.forward(&tape, &p, &[&[1, 2], &[3]]).is_err());
        assert!(m.forward(&tape, &p, &[&[16]]).is_err());
        assert!(m.forward(&tape, &p, &[&[0; 7]]).is_err());
    }

    #[test]
    fn linformer_needs_room_for_cls() {
        let cfg = ModelConfig::new(8, 2, 12, 1, 0).unwrap();
        let shape = ClassifierShape {
            vocab: 16,
            max_len: 6,
            n_classes: 3,
        };
        assert!(ClassifierModel::new(VariantSpec::linformer(cfg, 2, 6).unwrap(), shape).is_err());
        assert!(ClassifierModel::new(VariantSpec::linformer(cfg, 2, 7).unwrap(), shape).is_ok());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gfl");
        let cfg = ModelConfig::new(8, 2, 12, 1, 0).unwrap();
        let m = model(VariantSpec::lrt(cfg, 3).unwrap());
        let p = m.init_params::<f32>(11).unwrap();
        save_model(&path, &m, &p).unwrap();
        let (m2, p2) = load_model::<f32>(&path).unwrap();
        assert_eq!(m2, m);
        assert_eq!(p2.total_count(), p.total_count());
        assert_eq!(p2.get("enc.0.attn.q.E").unwrap(), p.get("enc.0.attn.q.E").unwrap());
        assert!(load_model::<f64>(&path).is_err());
    }
}
