use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and a fixed learning rate.
///
/// Moment buffers are keyed by parameter name so they survive a checkpoint
/// round trip independent of collection order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub first_moment: BTreeMap<String, Vec<f32>>,
    pub second_moment: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update over every trainable parameter. Gradients are left intact.
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let n = p.len();
            let m = self.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new(&[2], vec![1.0, -1.0], ParamKind::Weight);
        p.grad = vec![0.5, -3.0];
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        });
        adam.step(&mut [("p".to_string(), &mut p)]);
        // bias-corrected first step is lr * sign(g)
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_params_are_untouched() {
        let mut p = Param::new(&[1], vec![1.0], ParamKind::NormAffine);
        p.trainable = false;
        p.grad = vec![1.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [("p".to_string(), &mut p)]);
        assert_eq!(p.value, vec![1.0]);
        assert!(adam.first_moment.is_empty());
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::new(&[1], vec![3.0], ParamKind::Weight);
        let mut adam = Adam::new(AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        });
        for _ in 0..2000 {
            p.grad = vec![2.0 * (p.value[0] - 1.0)];
            adam.step(&mut [("p".to_string(), &mut p)]);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-2);
    }
}
