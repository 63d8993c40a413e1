use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Real, Tape, Var};

/// Linear encoder-decoder unit: an `m×n` map realised as `E[m×r]·D[r×n]`,
/// stored as `{prefix}.E`, `{prefix}.D` and optionally `{prefix}.b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedLayer {
    pub prefix: String,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub bias: bool,
}

impl LedLayer {
    pub fn new(prefix: impl Into<String>, m: usize, n: usize, r: usize, bias: bool) -> Result<Self> {
        if m == 0 || n == 0 || r == 0 {
            return Err(Error::Config(format!("LED dimensions must be positive: {m}×{n}, rank {r}")));
        }
        Ok(LedLayer {
            prefix: prefix.into(),
            m,
            n,
            r,
            bias,
        })
    }

    /// `r·(m+n)`, plus `n` with a bias.
    pub fn param_count(&self) -> u64 {
        (self.r * (self.m + self.n) + if self.bias { self.n } else { 0 }) as u64
    }

    /// Parameters of the dense `m×n` matrix this replaces (plus the same bias).
    pub fn dense_param_count(&self) -> u64 {
        (self.m * self.n + if self.bias { self.n } else { 0 }) as u64
    }

    /// Forward MACs for one input row.
    pub fn macs_per_row(&self) -> u64 {
        (self.r * (self.m + self.n)) as u64
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert_xavier(format!("{}.E", self.prefix), self.m, self.r)?;
        store.insert_xavier(format!("{}.D", self.prefix), self.r, self.n)?;
        if self.bias {
            store.insert_const(format!("{}.b", self.prefix), &[self.n], 0.0)?;
        }
        Ok(())
    }
}

/// `(x·E)·D (+ b)`; `E·D` is never formed.
pub fn led_forward<T: Real>(tape: &Tape<T>, params: &ParamStore<T>, x: &Var<T>, led: &LedLayer) -> Result<Var<T>> {
    let s = x.shape();
    if s.last() != Some(&led.m) {
        return Err(Error::Dimension {
            op: "led_forward",
            lhs: s.to_vec(),
            rhs: vec![led.m, led.n],
        });
    }
    let e = tape.param(params, &format!("{}.E", led.prefix))?;
    let d = tape.param(params, &format!("{}.D", led.prefix))?;
    if e.shape() != [led.m, led.r] || d.shape() != [led.r, led.n] {
        return Err(Error::Dimension {
            op: "led_forward (stored factors)",
            lhs: e.shape().to_vec(),
            rhs: d.shape().to_vec(),
        });
    }
    let y = tape.matmul(&tape.matmul(x, &e)?, &d)?;
    if led.bias {
        tape.add_broadcast(&y, &tape.param(params, &format!("{}.b", led.prefix))?)
    } else {
        Ok(y)
    }
}
