//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment estimates for every parameter of one [`ParamSet`], in set order.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value().shape().to_vec()))
                .collect()
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Rebuilds state from saved moments; shapes must match `params`.
    pub fn from_parts(
        config: AdamConfig,
        step_count: u64,
        first_moment: Vec<Tensor<T>>,
        second_moment: Vec<Tensor<T>>,
        params: &ParamSet<T>,
    ) -> Result<Self> {
        let ok = first_moment.len() == params.len()
            && second_moment.len() == params.len()
            && params
                .iter()
                .zip(first_moment.iter().zip(&second_moment))
                .all(|(p, (m, v))| m.shape() == p.value().shape() && v.shape() == p.value().shape());
        if !ok {
            return Err(Error::Shape(
                "optimizer moments do not match the parameter set".into(),
            ));
        }
        Ok(Self {
            config,
            step_count,
            first_moment,
            second_moment,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Tensor<T>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor<T>] {
        &self.second_moment
    }

    /// Applies one update from the accumulated gradients, then clears them.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|p| !p.grad().all_finite()) {
            return Err(Error::NonFiniteGradient(bad.name().to_string()));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step_size = T::from_f64(c.learning_rate / bias1);
        let inv_sqrt_bias2 = T::from_f64(1.0 / bias2.sqrt());
        let eps = T::from_f64(c.epsilon);

        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().clone();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let value = p.value_mut().data_mut();
            for j in 0..value.len() {
                let g = grad.data()[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                value[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bias2 + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(x: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::scalar(x)).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut ps = scalar_set(0.3);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.get(0).value().item(), 0.3);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [2.5, -0.01, 40.0] {
            let mut ps = scalar_set(1.0);
            let lr = 1e-3;
            let mut adam = AdamState::new(AdamConfig::with_learning_rate(lr), &ps);
            ps.get_mut(0).grad_mut().data_mut()[0] = g;
            adam.step(&mut ps).unwrap();
            // closed form: lr * g / (|g| + eps)
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((ps.get(0).value().item() - expected).abs() < 1e-12);
            assert!((1.0 - ps.get(0).value().item() - lr * g.signum()).abs() < 1e-6);
            assert_eq!(ps.get(0).grad().item(), 0.0);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut ps = scalar_set(1.0);
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(1e-2), &ps);
        let mut steps = 0;
        while ps.get(0).value().item().abs() >= 1e-2 {
            let x = ps.get(0).value().item();
            ps.get_mut(0).grad_mut().data_mut()[0] = 2.0 * x;
            adam.step(&mut ps).unwrap();
            steps += 1;
            assert!(steps <= 2000, "did not converge");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = scalar_set(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        ps.get_mut(0).grad_mut().data_mut()[0] = f64::NAN;
        let err = adam.step(&mut ps).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(ps.get(0).value().item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut ps = scalar_set(0.7);
            let mut adam = AdamState::new(AdamConfig::default(), &ps);
            for k in 0..10 {
                ps.get_mut(0).grad_mut().data_mut()[0] = (k as f64).sin();
                adam.step(&mut ps).unwrap();
            }
            ps.get(0).value().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
