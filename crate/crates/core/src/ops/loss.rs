//! Scalar reductions used by the losses. Sums are accumulated in f64.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

pub fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "l1")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).abs())
        .sum();
    Ok(s / a.len() as f64)
}

/// `sign(a - b) / N`, with the subgradient at zero taken as 0.
pub fn mean_abs_diff_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let inv = 1.0 / a.len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            T::from_f64(if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            })
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape as input")
}

pub fn mean_sq_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "l2")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `2 (a - b) / N`.
pub fn mean_sq_diff_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let k = 2.0 / a.len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| T::from_f64(k * (x.to_f64() - y.to_f64())))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape as input")
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross entropy of predictions against a constant label:
/// `-mean log p` for label 1, `-mean log(1 - p)` for label 0.
pub fn bce<T: Real>(p: &Tensor<T>, real_label: bool) -> f64 {
    let s: f64 = p
        .data()
        .iter()
        .map(|&v| {
            let q = clamp_prob(v.to_f64());
            if real_label {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum();
    s / p.len() as f64
}

/// Gradient of [`bce`]; zero where the clamp is active.
pub fn bce_grad<T: Real>(p: &Tensor<T>, real_label: bool) -> Tensor<T> {
    let inv = 1.0 / p.len() as f64;
    p.map(|v| {
        let x = v.to_f64();
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&x) {
            return T::ZERO;
        }
        T::from_f64(if real_label {
            -inv / x
        } else {
            inv / (1.0 - x)
        })
    })
}
