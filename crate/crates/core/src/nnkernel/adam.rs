use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParameterStore) -> Self {
        let moments = params
            .iter()
            .map(|(name, p)| (name.to_string(), (vec![0.0; p.len()], vec![0.0; p.len()])))
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Applies one update using the gradients currently held by `params`.
    pub fn step(&mut self, params: &mut ParameterStore) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::Shape(format!("optimizer has no state for {name}")))?;
            if m.len() != p.len() {
                return Err(Error::Shape(format!("optimizer state for {name} has wrong size")));
            }
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkernel::Param;

    fn scalar_store(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert_if_absent("w", || {
            let mut p = Param::zeros(vec![1]);
            p.value[0] = w;
            p
        });
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut s = scalar_store(1.0);
            let mut adam = AdamState::new(AdamConfig::default(), &s);
            s.get_mut("w").unwrap().grad[0] = g;
            adam.step(&mut s).unwrap();
            let expected = 1.0 - 0.001 * g / (g.abs() + 1e-7);
            assert!((s.get("w").unwrap().value[0] - expected).abs() < 1e-15);
            assert_eq!(adam.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        s.get_mut("w").unwrap().grad[0] = 1.0;
        adam.step(&mut s).unwrap();
        let w1 = s.get("w").unwrap().value[0];
        let (m1, v1) = adam.moments("w").map(|(m, v)| (m[0], v[0])).unwrap();
        s.zero_grad();
        // the bias-corrected first moment still pushes, so compare moments only
        adam.step(&mut s).unwrap();
        let (m2, v2) = adam.moments("w").map(|(m, v)| (m[0], v[0])).unwrap();
        assert!((m2 - 0.9 * m1).abs() < 1e-15 && (v2 - 0.999 * v1).abs() < 1e-15);
        assert!(s.get("w").unwrap().value[0] < w1);

        let mut fresh = scalar_store(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &fresh);
        adam.step(&mut fresh).unwrap();
        assert_eq!(fresh.get("w").unwrap().value[0], 0.5);
    }

    #[test]
    fn minimizes_a_parabola() {
        // f(w) = w^2, grad = 2w
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        let mut trace = vec![1.0];
        for _ in 0..100 {
            let w = s.get("w").unwrap().value[0];
            s.get_mut("w").unwrap().grad[0] = 2.0 * w;
            adam.step(&mut s).unwrap();
            trace.push(s.get("w").unwrap().value[0]);
        }
        let last = *trace.last().unwrap();
        assert!(last.abs() < 0.95);
        assert!(trace.windows(2).all(|w| w[1].abs() <= w[0].abs()));
        // with a constant-sign gradient each step moves by at most ~lr
        assert!(last > 0.89 && last < 0.91, "{last}");
    }
}
