//! Polynomial learning-rate schedule and SGD with momentum and weight decay.

use std::collections::BTreeMap;

use instcal_core::store::ParamStore;

/// base_lr * (1 - iter/total)^power.
pub fn poly_lr(iter: u64, total: u64, base_lr: f64, power: f64) -> f64 {
    assert!(total > 0, "poly_lr: total must be > 0");
    assert!(iter <= total, "poly_lr: iter {iter} beyond total {total}");
    base_lr * (1.0 - iter as f64 / total as f64).powf(power)
}

pub struct Sgd {
    pub base_lr: f64,
    pub power: f64,
    pub total: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(base_lr: f64, power: f64, total: u64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            base_lr,
            power,
            total,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// One update over named gradients. Every gradient must belong to a
    /// trainable parameter; anything else is a freeze-contract violation.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(String, Vec<f64>)], iter: u64) -> f64 {
        let lr = poly_lr(iter, self.total, self.base_lr, self.power);
        for (name, grad) in grads {
            let param = store.expect(name).expect("gradient for unknown parameter");
            assert!(
                param.trainable,
                "freeze contract violated: gradient for frozen tensor {name}"
            );
            let mut data = param.tensor.data.clone();
            let vel = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; data.len()]);
            for ((p, g), v) in data.iter_mut().zip(grad).zip(vel.iter_mut()) {
                let g = g + self.weight_decay * *p;
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
            store.set_data(name, data).expect("parameter exists");
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use instcal_core::Tensor;

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 100, 2.5e-3, 0.9), 2.5e-3);
        assert_eq!(poly_lr(100, 100, 2.5e-3, 0.9), 0.0);
        let mid = poly_lr(50, 100, 2.5e-3, 0.9);
        let expect = 2.5e-3 * 0.5f64.powf(0.9);
        assert!((mid - expect).abs() < 1e-12);
        assert!((mid - 1.3397e-3).abs() < 1e-7);
    }

    #[test]
    fn poly_lr_is_strictly_decreasing() {
        let mut last = f64::INFINITY;
        for i in 0..=50 {
            let v = poly_lr(i, 50, 1.0, 0.9);
            assert!(v < last, "not strictly decreasing at {i}");
            last = v;
        }
    }

    #[test]
    #[should_panic(expected = "total must be > 0")]
    fn poly_lr_zero_total_panics() {
        poly_lr(0, 0, 1.0, 0.9);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![1.0]), true);
        let mut opt = Sgd::new(0.1, 0.0, 10, 0.9, 0.0); // power 0: constant lr
        opt.step(&mut store, &[("w".into(), vec![1.0])], 0);
        // v=1, p = 1 - 0.1 = 0.9
        assert!((store.expect("w").unwrap().tensor.data[0] - 0.9).abs() < 1e-12);
        opt.step(&mut store, &[("w".into(), vec![1.0])], 1);
        // v = 0.9*1 + 1 = 1.9, p = 0.9 - 0.19 = 0.71
        assert!((store.expect("w").unwrap().tensor.data[0] - 0.71).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![2.0]), true);
        let mut opt = Sgd::new(0.1, 0.0, 10, 0.0, 0.5);
        opt.step(&mut store, &[("w".into(), vec![0.0])], 0);
        // g = 0 + 0.5*2 = 1, p = 2 - 0.1 = 1.9
        assert!((store.expect("w").unwrap().tensor.data[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "freeze contract")]
    fn updating_frozen_tensor_panics() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![1.0]), false);
        let mut opt = Sgd::new(0.1, 0.9, 10, 0.9, 0.0);
        opt.step(&mut store, &[("w".into(), vec![1.0])], 0);
    }
}
