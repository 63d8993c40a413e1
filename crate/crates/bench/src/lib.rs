//! Fixtures shared by the criterion benchmarks.

use greenformers::blocks::{init_stack_params, stack_forward};
use greenformers::{backward, ModelConfig, ParamStore, Result, Tape, Tensor, VariantKind, VariantSpec};

/// Initialized encoder stack plus a fixed input batch.
pub struct StackFixture {
    pub spec: VariantSpec,
    pub params: ParamStore<f32>,
    pub input: Tensor<f32>,
}

/// Deterministic, non-degenerate input of shape `shape`.
pub fn wave_input(shape: [usize; 3]) -> Tensor<f32> {
    let len = shape.iter().product::<usize>();
    let data: Vec<f64> = (0..len).map(|i| (i as f64 * 0.7548).sin()).collect();
    Tensor::from_f64(shape, &data).expect("length matches shape")
}

impl StackFixture {
    /// `rank` is `r` for the LRT and `k` for Linformer (sized for exactly `n` tokens).
    pub fn new(kind: VariantKind, cfg: ModelConfig, n: usize, rank: usize, batch: usize) -> Result<Self> {
        let spec = VariantSpec::of_kind(kind, cfg, rank, n)?;
        let mut params = ParamStore::new(0);
        init_stack_params(&mut params, &spec)?;
        Ok(StackFixture {
            spec,
            params,
            input: wave_input([batch, n, cfg.d_model]),
        })
    }

    pub fn forward(&self) -> Tensor<f32> {
        let tape = Tape::disabled();
        let x = tape.constant(self.input.clone());
        stack_forward(&tape, &self.params, &x, &self.spec).expect("valid fixture").into_tensor()
    }

    /// One forward and backward pass of the mean output; returns the loss.
    pub fn forward_backward(&mut self) -> f32 {
        let tape = Tape::new();
        let x = tape.constant(self.input.clone());
        let y = stack_forward(&tape, &self.params, &x, &self.spec).expect("valid fixture");
        let loss = tape.mean(&y).expect("scalar loss");
        self.params.zero_grad();
        backward(&tape, &loss, &mut self.params).expect("backward");
        loss.value().data()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_run_for_every_variant() {
        let cfg = ModelConfig::new(16, 2, 32, 1, 0).unwrap();
        for kind in VariantKind::ALL {
            let mut f = StackFixture::new(kind, cfg, 8, 4, 2).unwrap();
            assert_eq!(f.forward().shape(), &[2, 8, 16]);
            assert!(f.forward_backward().is_finite());
        }
    }
}
