//! Adam with optional global-norm gradient clipping.

use super::params::ParamStore;
use super::tape::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    steps: i32,
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None, m: Vec::new(), v: Vec::new(), steps: 0 }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update; `grads` is aligned with the store's parameter order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {}", self.steps + 1)));
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Mat::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        for (((p, g), m), v) in store.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.raw_dim() != g.raw_dim() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.dim(), p.dim())));
            }
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        store.add("w", array![[1.0, -2.0, 0.5]]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &[array![[3.0, -0.01, 0.0]]]).unwrap();
        let w = store.get(store.id("w").unwrap());
        assert!((w[[0, 0]] - 0.9).abs() < 1e-9);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(w[[0, 2]], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[4.0, -3.0]]);
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = store.get(id).mapv(|v| 2.0 * (v - 1.0));
            opt.step(&mut store, &[g]).unwrap();
        }
        assert!(store.get(id).iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn clipping_and_errors() {
        let grads = [array![[3.0, 4.0]]];
        assert_eq!(global_norm(&grads), 5.0);
        let mut store = ParamStore::new();
        store.add("w", array![[0.0, 0.0]]);
        let mut opt = Adam::new(0.1).with_clip(1.0);
        assert!(opt.step(&mut store, &[array![[f64::NAN, 0.0]]]).is_err());
        assert!(opt.step(&mut store, &[]).is_err());
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(opt.steps(), 1);
    }
}
