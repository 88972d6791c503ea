//! AdamW and the poly learning-rate schedule.

use super::TrainConfig;

/// `max(lr_min, lr0 * (1 - step/total)^power)`; `lr0` when there are no steps.
pub fn poly_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return cfg.lr0;
    }
    let frac = 1.0 - (step.min(total_steps) as f64 / total_steps as f64);
    (cfg.lr0 * frac.powf(cfg.poly_power)).max(cfg.lr_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam moments over a fixed list of tensors, with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    params: AdamWParams,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: AdamWParams) -> Self {
        Self { params, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update of every tensor in `tensors` (pairs of parameter, gradient).
    /// The tensor list must keep the same shapes from call to call.
    pub fn step(&mut self, lr: f64, tensors: &mut [(&mut [f64], &[f64])]) {
        if self.m.is_empty() {
            self.m = tensors.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), tensors.len(), "optimizer tensor list changed");
        self.t += 1;
        let AdamWParams { beta1, beta2, eps, weight_decay } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for ((p, g), (m, v)) in tensors.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.len(), m.len(), "optimizer tensor shape changed");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p[i] -= lr * (update + weight_decay * p[i]);
            }
        }
    }
}
