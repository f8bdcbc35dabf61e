//! Reverse-mode vs central finite-difference gradient comparison.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub relative_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    /// Largest relative error over all checked tensors.
    pub max_relative_error: f64,
    /// Whether any loss evaluation or gradient was NaN/Inf.
    pub non_finite: bool,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        !self.non_finite && self.max_relative_error <= tolerance
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// Relative error `|a - n|_2 / max(|a|_2, |n|_2)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    norm(&diff) / scale
}

/// Checks the gradient of the scalar built by `f` with respect to every named input.
///
/// `f` receives one var per input (leaves on a recording tape during the
/// analytic pass, constants during finite differencing) and must return a
/// one-element result. Each element is perturbed by `±step`.
pub fn grad_check<T, F>(f: F, inputs: &[(&str, Tensor<T>)], step: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
{
    check(&f, inputs, step, |values: &[Tensor<T>], j, k, delta| {
        let mut values = values.to_vec();
        let orig = values[j].data()[k];
        values[j].data_mut()[k] = T::from_f64(orig.to_f64() + delta);
        // the perturbation actually applied after rounding to T
        let applied = values[j].data()[k].to_f64() - orig.to_f64();
        Ok((scalar(&f, &values)?, applied))
    })
}

/// Gradients of `f` at precision `T` against central differences of `reference`,
/// the same function in `f64`, taken at the same (exactly widened) inputs.
pub fn grad_check_reference<T, F, G>(
    f: F,
    reference: G,
    inputs: &[(&str, Tensor<T>)],
    step: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
    G: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let wide: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.cast()).collect();
    check(&f, inputs, step, |_, j, k, delta| {
        let mut values = wide.clone();
        values[j].data_mut()[k] += delta;
        Ok((scalar(&reference, &values)?, delta))
    })
}

fn scalar<T: Real>(f: &impl Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>, values: &[Tensor<T>]) -> Result<f64> {
    let t = Tape::no_grad();
    let vs: Vec<Var<T>> = values.iter().map(|v| Var::constant(v.clone())).collect();
    let y = f(&t, &vs)?;
    if y.value().len() != 1 {
        return Err(Error::Shape("grad_check function must be scalar".into()));
    }
    Ok(y.item().to_f64())
}

/// `eval(values, input, element, delta)` returns the perturbed loss and the perturbation applied.
fn check<T, F, E>(f: &F, inputs: &[(&str, Tensor<T>)], step: f64, eval: E) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Tape<T>, &[Var<T>]) -> Result<Var<T>>,
    E: Fn(&[Tensor<T>], usize, usize, f64) -> Result<(f64, f64)>,
{
    let tape = Tape::new();
    let vars: Vec<Var<T>> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(&out)?;
    let mut non_finite = !out.item().is_finite();

    let values: Vec<Tensor<T>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut tensors = Vec::new();
    for (j, (name, _)) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get_or_zero(&vars[j])
            .data()
            .iter()
            .map(|v| v.to_f64())
            .collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..values[j].len() {
            let (plus, up) = eval(&values, j, k, step)?;
            let (minus, down) = eval(&values, j, k, -step)?;
            numeric.push((plus - minus) / (up - down));
        }
        non_finite |= analytic.iter().chain(&numeric).any(|v| !v.is_finite());
        tensors.push(TensorCheck {
            name: name.to_string(),
            relative_error: relative_error(&analytic, &numeric),
            analytic_norm: analytic.iter().map(|x| x * x).sum::<f64>().sqrt(),
        });
    }
    let max_relative_error = tensors
        .iter()
        .map(|t| t.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_relative_error,
        non_finite,
    })
}
