//! Per-channel batch normalization over the N, H, W axes of the trailing channel dim.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Values the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Real> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

/// Batch mean and biased variance per channel, for updating running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn channels<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = *x.shape().last().unwrap_or(&0);
    if gamma.len() != c || beta.len() != c {
        return shape_err(format!(
            "batchnorm over {c} channels got gamma/beta of {}/{} values",
            gamma.len(),
            beta.len()
        ));
    }
    Ok(c)
}

/// Training mode: normalize with batch statistics. Requires more than one sample.
pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats)> {
    let c = channels(x, gamma, beta)?;
    if x.shape()[0] < 2 {
        return Err(Error::Shape(
            "batchnorm in training mode needs a batch of at least 2".into(),
        ));
    }
    let count = (x.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for row in x.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.to_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    // second pass removes the rounding left by the naive sum
    let mut correction = vec![0.0f64; c];
    for row in x.data().chunks(c) {
        for ((s, &v), m) in correction.iter_mut().zip(row).zip(&mean) {
            *s += v.to_f64() - m;
        }
    }
    for (m, s) in mean.iter_mut().zip(&correction) {
        *m += s / count;
    }
    let mut var = vec![0.0f64; c];
    for row in x.data().chunks(c) {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.to_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let (out, cache) = apply(x, gamma, beta, &mean, &inv_std, true);
    Ok((out, cache, BatchStats { mean, var }))
}

/// Inference mode: normalize with running statistics.
pub fn batchnorm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c = channels(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return shape_err("batchnorm running statistics do not match channel count");
    }
    let mean: Vec<f64> = running_mean.data().iter().map(|v| v.to_f64()).collect();
    let inv_std: Vec<f64> = running_var
        .data()
        .iter()
        .map(|v| 1.0 / (v.to_f64() + BN_EPSILON).sqrt())
        .collect();
    Ok(apply(x, gamma, beta, &mean, &inv_std, false))
}

fn apply<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[f64],
    inv_std: &[f64],
    training: bool,
) -> (Tensor<T>, BatchNormCache<T>) {
    let c = mean.len();
    let mut normalized = x.clone();
    let mut out = x.clone();
    for (xr, yr) in normalized
        .data_mut()
        .chunks_mut(c)
        .zip(out.data_mut().chunks_mut(c))
    {
        for ch in 0..c {
            let xh = T::from_f64((xr[ch].to_f64() - mean[ch]) * inv_std[ch]);
            xr[ch] = xh;
            yr[ch] = gamma.data()[ch] * xh + beta.data()[ch];
        }
    }
    let cache = BatchNormCache {
        normalized,
        inv_std: inv_std.iter().map(|&v| T::from_f64(v)).collect(),
        training,
    };
    (out, cache)
}

/// Returns `(d input, d gamma, d beta)`.
pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = gamma.len();
    let count = (grad_out.len() / c) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xh = vec![0.0f64; c];
    for (dy, xh) in grad_out.data().chunks(c).zip(cache.normalized.data().chunks(c)) {
        for ch in 0..c {
            sum_dy[ch] += dy[ch].to_f64();
            sum_dy_xh[ch] += dy[ch].to_f64() * xh[ch].to_f64();
        }
    }
    let mut dx = grad_out.clone();
    for (d, xh) in dx.data_mut().chunks_mut(c).zip(cache.normalized.data().chunks(c)) {
        for ch in 0..c {
            let scale = gamma.data()[ch].to_f64() * cache.inv_std[ch].to_f64();
            let g = if cache.training {
                scale
                    * (d[ch].to_f64() - sum_dy[ch] / count - xh[ch].to_f64() * sum_dy_xh[ch] / count)
            } else {
                scale * d[ch].to_f64()
            };
            d[ch] = T::from_f64(g);
        }
    }
    let to_t = |v: Vec<f64>| Tensor::new(vec![c], v.into_iter().map(T::from_f64).collect());
    Ok((dx, to_t(sum_dy_xh)?, to_t(sum_dy)?))
}

/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running<T: Real>(running: &mut Tensor<T>, batch: &[f64]) {
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = T::from_f64(BN_MOMENTUM * r.to_f64() + (1.0 - BN_MOMENTUM) * b);
    }
}
