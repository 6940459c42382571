use crate::params::{Gradients, ParamStore};
use crate::{Real, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update every trainable parameter that has a gradient. Frozen parameters are never touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            if !param.trainable {
                continue;
            }
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                (Tensor::zeros(g.shape()), Tensor::zeros(g.shape()))
            });
            let w = param.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + one_b1 * gi;
                let vi = b2 * v.data()[i] + one_b2 * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                w[i] -= step_size * mi / ((vi * inv_bc2).sqrt() + eps);
            }
        }
    }
}
