use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFL1";

/// A trainable tensor and its gradient slot.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    /// Mutable access to the value. Copies first if a tape still holds it.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad_mut(&mut self) -> &mut Tensor<T> {
        &mut self.grad
    }
}

/// Named trainable tensors in construction order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: IndexMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(
            name,
            Param {
                value: Arc::new(value),
                grad,
            },
        );
        Ok(())
    }

    /// Inserts an `rows × cols` matrix with fan-based uniform init,
    /// bound `sqrt(6 / (rows + cols))`.
    pub fn insert_xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<()> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::uniform([rows, cols], bound, &mut self.rng);
        self.insert(name, t)
    }

    pub fn insert_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, Tensor::full(shape.to_vec(), T::of(value)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub(crate) fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .get_index_of(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub(crate) fn param_at(&self, idx: usize) -> (&str, &Param<T>) {
        let (k, v) = self.entries.get_index(idx).expect("valid parameter index");
        (k.as_str(), v)
    }

    pub(crate) fn param_at_mut(&mut self, idx: usize) -> (&str, &mut Param<T>) {
        let (k, v) = self.entries.get_index_mut(idx).expect("valid parameter index");
        (k.as_str(), v)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| p.value.as_ref())
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(Param::value_mut)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "ParamStore::set",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub(crate) fn value_arc(&self, idx: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.param_at(idx).1.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sum of element counts over all entries.
    pub fn total_count(&self) -> u64 {
        self.entries.values().map(|p| p.value.numel() as u64).sum()
    }

    /// Element count over entries whose name satisfies `pred`.
    pub fn count_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        self.entries
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, p)| p.value.numel() as u64)
            .sum()
    }

    /// Serialises values as `GFL1` followed by `(name, rank, dims, payload)` records.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for (name, p) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
            for &d in p.value.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in p.value.data() {
                x.write_le(&mut buf);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Parses the format written by [`write_to`](Self::write_to). The element
    /// type must match the one used when writing.
    pub fn read_from<R: Read>(mut r: R, seed: u64) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(format_err("bad magic"));
        }
        let mut store = ParamStore::new(seed);
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| format_err(format!("name is not UTF-8: {e}")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = cur.take(n * T::BYTES)?;
            let data = payload.chunks(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| format_err(e.to_string()))?;
            store.insert(name, t)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), seed)
    }
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "parameter file",
        detail: detail.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
