use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        Self {
            cfg,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps) + weight_decay * p.data[j];
                p.data[j] -= lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.push(Param {
            name: "x".into(),
            shape: vec![2],
            data: vec![3.0, -2.0],
        });
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &ps,
        );
        for _ in 0..500 {
            let g: Vec<f64> = ps.data(0).iter().map(|x| 2.0 * x).collect();
            opt.step(&mut ps, &[g]);
        }
        assert!(ps.data(0).iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut ps = ParamSet::new();
        ps.push(Param {
            name: "x".into(),
            shape: vec![3],
            data: vec![0.1, -7.25, 1e-300],
        });
        let before = ps.clone();
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            &ps,
        );
        opt.step(&mut ps, &[vec![1.0, -3.0, 0.5]]);
        assert_eq!(ps, before);
    }
}
