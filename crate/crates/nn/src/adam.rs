//! Bias-corrected Adam.

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let first: Vec<_> = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must align with `store` entry by entry.
    /// Non-finite gradients are rejected before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first.len() {
            return Err(NnError::Shape {
                op: "adam_step",
                node: 0,
                detail: format!("{} gradients for {} parameters", grads.len(), store.len()),
            });
        }
        for (id, g) in store.ids().zip(grads) {
            if g.shape() != store.get(id).shape() {
                return Err(NnError::Shape {
                    op: "adam_step",
                    node: id.0,
                    detail: format!(
                        "gradient {:?} for parameter {} {:?}",
                        g.shape(),
                        store.name(id),
                        store.get(id).shape()
                    ),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let step_size = T::from_f64_lossy(self.lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(grads[k].data()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
