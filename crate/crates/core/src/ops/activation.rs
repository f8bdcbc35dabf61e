use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Number of channels in the trailing axis an alpha tensor applies to.
fn alpha_channels<T: Real>(x: &Tensor<T>, alpha: &Tensor<T>) -> Result<usize> {
    let c = *x.shape().last().unwrap_or(&1);
    match alpha.len() {
        1 => Ok(1),
        a if a == c => Ok(c),
        a => shape_err(format!(
            "prelu alpha has {a} values; expected 1 (shared) or {c} (per channel)"
        )),
    }
}

/// `x` for `x >= 0`, `alpha * x` otherwise. Alpha is shared when it has one value.
pub fn prelu_forward<T: Real>(x: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    let c = alpha_channels(x, alpha)?;
    let a = alpha.data();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < T::ZERO {
            *v *= a[i % c];
        }
    }
    Ok(out)
}

/// Returns `(d input, d alpha)`.
pub fn prelu_backward<T: Real>(
    x: &Tensor<T>,
    alpha: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = alpha_channels(x, alpha)?;
    let a = alpha.data();
    let mut dx = grad_out.clone();
    let mut da = vec![T::ZERO; alpha.len()];
    for (i, (g, &xv)) in dx.data_mut().iter_mut().zip(x.data()).enumerate() {
        if xv < T::ZERO {
            da[i % c] += *g * xv;
            *g *= a[i % c];
        }
    }
    Ok((dx, Tensor::new(alpha.shape().to_vec(), da)?))
}

pub fn leaky_relu_forward<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v < T::ZERO { v * slope } else { v })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, slope: T, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad_out.clone();
    for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv < T::ZERO {
            *g *= slope;
        }
    }
    dx
}

/// Logistic function evaluated without overflowing `exp` for large `|x|`.
pub fn sigmoid_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::ZERO {
            T::ONE / (T::ONE + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::ONE + e)
        }
    })
}

/// Gradient expressed through the forward output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad_out.clone();
    for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (T::ONE - s);
    }
    dx
}
