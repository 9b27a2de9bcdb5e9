use serde::{Deserialize, Serialize};

use crate::fields::FieldParams;

/// Adam with bias-corrected moments over every parameter tensor, flattened in
/// [`FieldParams::named_tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Exponential interpolation from `initial` to `final_rate` over a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub initial: f64,
    pub final_rate: f64,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate { initial: 5e-4, final_rate: 5e-5 }
    }
}

impl LearningRate {
    pub fn at(&self, step: u64, total: u64) -> f64 {
        if total <= 1 {
            return self.initial;
        }
        let frac = (step as f64 / (total - 1) as f64).min(1.0);
        self.initial * (self.final_rate / self.initial).powf(frac)
    }
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut FieldParams<f32>, grads: &FieldParams<f32>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr = lr as f32;
        let mut k = 0;
        let grads = grads.named_tensors();
        for (dst, (_, g)) in params.tensors_mut().into_iter().zip(grads) {
            for (p, &g) in dst.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{init_params, NetConfig};

    #[test]
    fn schedule_endpoints() {
        let lr = LearningRate::default();
        assert!((lr.at(0, 100) - 5e-4).abs() < 1e-12);
        assert!((lr.at(99, 100) - 5e-5).abs() < 1e-12);
        assert!(lr.at(50, 100) < 5e-4 && lr.at(50, 100) > 5e-5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = NetConfig { k: 2, k_prime: 1, ..Default::default() };
        let mut p = init_params::<f32>(0, &cfg).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.inv_std_param[0] = 3.0;
        let mut opt = Adam::new(p.n_params());
        opt.step(&mut p, &g, 1e-2);
        assert!((before.inv_std_param[0] - p.inv_std_param[0] - 1e-2).abs() < 1e-6);
        assert_eq!(before.sdf, p.sdf);
    }
}
