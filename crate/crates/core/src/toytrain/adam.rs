use crate::numcore::{ParamStore, Real, Tensor};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held by `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        if self.m.is_empty() {
            for (_, p) in params.iter() {
                self.m.push(Tensor::zeros(p.value().shape()));
                self.v.push(Tensor::zeros(p.value().shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let c1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = p.grad().data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.value_mut().data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
