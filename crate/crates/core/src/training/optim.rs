use crate::error::{Result, SagaError};
use crate::nn::{Gradients, ParamStore};

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(SagaError::config("learning rate must be finite and nonnegative"));
        }
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return Err(SagaError::config("need 0 ≤ β1, β2 < 1 and ε > 0"));
        }
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Ok(Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with `grads` multiplied by `scale` (e.g. 1/batch size).
    /// Parameters without a gradient see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, scale: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in store.iter_mut().enumerate() {
            let g = grads.0.get(k).and_then(|g| g.as_ref());
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g.data()[j] * scale);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                // skipped at rate 0 so a -0.0 weight keeps its sign bit
                if self.learning_rate != 0.0 {
                    *w -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
                }
            }
        }
    }
}
