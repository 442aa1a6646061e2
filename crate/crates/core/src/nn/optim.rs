use serde::{Deserialize, Serialize};

use super::{Matrix, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Optimizer with per-parameter moment buffers (allocated for adam only).
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParameterSet) -> Self {
        let buffers = || -> Vec<Matrix> {
            match config.kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam => params
                    .entries()
                    .iter()
                    .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                    .collect(),
            }
        };
        Optimizer {
            config,
            step: 0,
            first_moment: buffers(),
            second_moment: buffers(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParameterSet) {
        self.step += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for p in params.entries_mut() {
                    let cols = p.value.cols();
                    for (k, (v, g)) in p
                        .value
                        .values_mut()
                        .iter_mut()
                        .zip(p.grad.values())
                        .enumerate()
                    {
                        if p.frozen_rows.is_empty() || !p.frozen_rows.contains(&(k / cols)) {
                            *v -= lr * g;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1,
                    beta2,
                    epsilon,
                    ..
                } = self.config;
                let t = self.step as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for ((p, m), s) in params
                    .entries_mut()
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let cols = p.value.cols();
                    let values = p.value.values_mut();
                    let grads = p.grad.values();
                    let m = m.values_mut();
                    let s = s.values_mut();
                    for k in 0..values.len() {
                        if !p.frozen_rows.is_empty() && p.frozen_rows.contains(&(k / cols)) {
                            continue;
                        }
                        let g = grads[k];
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                        s[k] = beta2 * s[k] + (1.0 - beta2) * g * g;
                        let m_hat = m[k] / bias1;
                        let s_hat = s[k] / bias2;
                        values[k] -= lr * m_hat / (s_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (ParameterSet, super::super::ParamId) {
        let mut p = ParameterSet::new();
        let id = p.add("w", Matrix::from_vec(1, 1, vec![value]).unwrap()).unwrap();
        p.grad_mut(id).values_mut()[0] = grad;
        (p, id)
    }

    #[test]
    fn sgd_step() {
        let (mut p, id) = single(0.0, 1.0);
        Optimizer::new(OptimizerConfig::sgd(0.1), &p).step(&mut p);
        assert!((p.value(id).values()[0] + 0.1).abs() < 1e-15);
        assert_eq!(p.grad(id).values()[0], 0.0);
    }

    #[test]
    fn zero_lr_is_noop() {
        for cfg in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
            let (mut p, id) = single(0.123456789, -3.0);
            Optimizer::new(cfg, &p).step(&mut p);
            assert_eq!(p.value(id).values()[0].to_bits(), 0.123456789f64.to_bits());
        }
    }

    #[test]
    fn adam_first_step_matches_reference() {
        // Textbook adam, step 1: m = (1-b1) g, v = (1-b2) g^2,
        // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
        let g = 0.37;
        let (mut p, id) = single(1.0, g);
        Optimizer::new(OptimizerConfig::adam(0.01), &p).step(&mut p);
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let expected = 1.0 - 0.01 * (m / 0.1) / ((v / 0.001f64).sqrt() + 1e-8);
        assert!((p.value(id).values()[0] - expected).abs() < 1e-15);
        assert!(p.value(id).values()[0] < 1.0);
    }

    #[test]
    fn frozen_rows_stay_zero() {
        let mut p = ParameterSet::new();
        let id = p.add("e", Matrix::from_vec(2, 1, vec![0.5, 0.5]).unwrap()).unwrap();
        p.freeze_row(id, 0);
        p.grad_mut(id).values_mut().copy_from_slice(&[1.0, 1.0]);
        Optimizer::new(OptimizerConfig::adam(0.1), &p).step(&mut p);
        assert_eq!(p.value(id).values()[0], 0.0);
        assert!(p.value(id).values()[1] < 0.5);
    }
}
