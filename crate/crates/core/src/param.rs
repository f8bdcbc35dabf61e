//! Named trainable parameters and their binding onto a tape.

use std::sync::Arc;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Parameter<T: Real = f32> {
    name: String,
    value: Arc<Tensor<T>>,
    grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value: Arc::new(value),
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    /// Mutable access to the value; clones it if a binding still shares it.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad_mut(&mut self) -> &mut Tensor<T> {
        &mut self.grad
    }

    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return shape_err(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.name,
                self.value.shape(),
                value.shape()
            ));
        }
        self.value = Arc::new(value);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::ZERO);
    }
}

/// Ordered parameters with unique names.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Real = f32> {
    params: Vec<Parameter<T>>,
}

/// Vars for every parameter of a set, in the set's order.
pub struct Bound<T: Real = f32> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Bound<T> {
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Self { vars }
    }
}

impl<T: Real> std::ops::Deref for Bound<T> {
    type Target = [Var<T>];

    fn deref(&self) -> &[Var<T>] {
        &self.vars
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, index: usize) -> &Parameter<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter<T> {
        &mut self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// Registers every parameter on the tape: as leaves when `trainable`,
    /// otherwise as constants that never receive gradient.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Bound<T> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf_arc(Arc::clone(&p.value))
                } else {
                    Var::from_arc(Arc::clone(&p.value))
                }
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients reached by a backward pass onto each parameter's gradient.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &Bound<T>) {
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn values_equal(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

/// Zero-mean normal initialization with std `sqrt(2 / fan_in)`.
pub fn he_normal<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_must_be_unique() {
        let mut ps = ParamSet::<f32>::new();
        ps.push("a", Tensor::zeros(vec![1])).unwrap();
        assert!(ps.push("a", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn frozen_binding_gets_no_gradient() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("w", Tensor::full(vec![2], 3.0)).unwrap();
        let tape = Tape::new();
        let b = ps.bind(&tape, false);
        let x = tape.leaf(Tensor::full(vec![2], 1.0));
        let y = tape.add(&x, &b[0]).unwrap();
        let l = tape.mean(&y);
        let g = tape.backward(&l).unwrap();
        ps.accumulate(&g, &b);
        assert!(ps.get(0).grad().data().iter().all(|&v| v == 0.0));
        assert_eq!(g.get(&x).unwrap().data(), &[0.5, 0.5]);
    }
}
