use serde::{Deserialize, Serialize};

use super::layers::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: default_eps(),
        }
    }
}

/// Adam with bias-corrected moment estimates and a constant learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        Adam {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients. Gradients are left in place.
    pub fn update(&mut self, params: Vec<&mut Param>) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter count mismatch");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn zero_grads(params: Vec<&mut Param>) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_steps_on_quadratic_bowl() {
        // f(x) = 0.5 * (x0² + 4 x1²), grad = (x0, 4 x1), start (1, -1).
        let cfg = AdamConfig::new(0.1, 0.9, 0.999);
        let mut p = Param::new(vec![2], vec![1.0, -1.0]);
        let mut opt = Adam::new(cfg, &[&p]);
        // Hand-rolled trajectory: m, v tracked explicitly per coordinate.
        let mut x = [1.0f64, -1.0];
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        for t in 1..=3 {
            let g = [x[0], 4.0 * x[1]];
            for k in 0..2 {
                m[k] = 0.9 * m[k] + 0.1 * g[k];
                v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
                let mh = m[k] / (1.0 - 0.9f64.powi(t));
                let vh = v[k] / (1.0 - 0.999f64.powi(t));
                x[k] -= 0.1 * mh / (vh.sqrt() + 1e-8);
            }
            p.grad = vec![p.value[0], 4.0 * p.value[1]];
            opt.update(vec![&mut p]);
        }
        assert!((p.value[0] - x[0]).abs() < 1e-12);
        assert!((p.value[1] - x[1]).abs() < 1e-12);
        // First step of Adam moves every coordinate by ~lr against the gradient sign.
        // Closed form after step 1: x = x0 - lr * sign(g) * |g|/(|g| + eps).
        let first = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        let mut q = Param::new(vec![1], vec![1.0]);
        let mut o = Adam::new(cfg, &[&q]);
        q.grad = vec![1.0];
        o.update(vec![&mut q]);
        assert!((q.value[0] - first).abs() < 1e-12);
    }
}
