use crate::error::{shape_err, Result};
use crate::tensor::{matmul_into, Real, Tensor};

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ([n, f], [wf, u]) = (x.shape(), w.shape()) else {
        return shape_err(format!(
            "dense expects input [N, F] and weight [F, U], got {:?} and {:?}",
            x.shape(),
            w.shape()
        ));
    };
    if f != wf {
        return shape_err(format!("dense input has {f} features, weight expects {wf}"));
    }
    Ok((*n, *f, *u))
}

/// `x @ w + b`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, u) = dims(x, w)?;
    if b.len() != u {
        return shape_err(format!("dense bias has {} values for {u} units", b.len()));
    }
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    matmul_into(x.data(), w.data(), &mut out, n, f, u, false, false, T::ONE);
    Tensor::new(vec![n, u], out)
}

/// Returns `(d input, d weight, d bias)`.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f, u) = dims(x, w)?;
    let mut dx = vec![T::ZERO; n * f];
    matmul_into(grad_out.data(), w.data(), &mut dx, n, u, f, false, true, T::ZERO);
    let mut dw = vec![T::ZERO; f * u];
    matmul_into(x.data(), grad_out.data(), &mut dw, f, n, u, true, false, T::ZERO);
    let mut db = vec![T::ZERO; u];
    for row in grad_out.data().chunks(u) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok((
        Tensor::new(vec![n, f], dx)?,
        Tensor::new(vec![f, u], dw)?,
        Tensor::new(vec![u], db)?,
    ))
}
