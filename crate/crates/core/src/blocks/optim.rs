use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with optional clipping of the global gradient norm.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is in store order. Returns the gradient
    /// norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<f64> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { index: 0, value: norm });
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((id, g), m), v) in store.ids().collect::<Vec<_>>().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let p = store.get_mut(id);
            if p.numel() != g.numel() {
                return Err(Error::mismatch("adam", p.shape(), g.shape()));
            }
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv * scale;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / bc1) / ((*vv / bc2).sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}
