//! 2D convolution with zero "same" padding, via im2col and GEMM.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{matmul_into, Real, Tensor};

/// Upper bound on im2col buffer size (elements) per chunk of output rows.
const CHUNK_ELEMS: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub k: usize,
    pub c_out: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Self> {
        let (n, h, w, c_in) = input.nhwc("conv2d input")?;
        let [k, k2, kc_in, c_out] = kernel.shape()[..] else {
            return shape_err(format!(
                "conv2d kernel must be [k, k, c_in, c_out], got {:?}",
                kernel.shape()
            ));
        };
        if k != k2 || k % 2 == 0 {
            return shape_err(format!("conv2d kernel must be square and odd, got {k}x{k2}"));
        }
        if kc_in != c_in {
            return shape_err(format!(
                "conv2d input has {c_in} channels but kernel expects {kc_in}"
            ));
        }
        if stride == 0 {
            return shape_err("conv2d stride must be positive");
        }
        Ok(Self {
            n,
            h,
            w,
            c_in,
            k,
            c_out,
            stride,
            pad: (k - 1) / 2,
            h_out: h.div_ceil(stride),
            w_out: w.div_ceil(stride),
        })
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.c_in
    }

    fn rows_per_chunk(&self) -> usize {
        (CHUNK_ELEMS / (self.w_out * self.patch_len()).max(1)).clamp(1, self.h_out)
    }

    /// Fills `cols` with the receptive fields of output rows `oy0..oy1` of image `img`.
    fn im2col<T: Real>(&self, image: &[T], oy0: usize, oy1: usize, cols: &mut [T]) {
        let pl = self.patch_len();
        let kc = self.k * self.c_in;
        for oy in oy0..oy1 {
            for ox in 0..self.w_out {
                let row = &mut cols[((oy - oy0) * self.w_out + ox) * pl..][..pl];
                for ky in 0..self.k {
                    let dst = &mut row[ky * kc..][..kc];
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    for kx in 0..self.k {
                        let d = &mut dst[kx * self.c_in..][..self.c_in];
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            d.fill(T::ZERO);
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.c_in;
                            d.copy_from_slice(&image[src..src + self.c_in]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds column gradients back onto the image gradient.
    fn col2im<T: Real>(&self, cols: &[T], oy0: usize, oy1: usize, image: &mut [T]) {
        let pl = self.patch_len();
        let kc = self.k * self.c_in;
        for oy in oy0..oy1 {
            for ox in 0..self.w_out {
                let row = &cols[((oy - oy0) * self.w_out + ox) * pl..][..pl];
                for ky in 0..self.k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = &row[ky * kc + kx * self.c_in..][..self.c_in];
                        let dst = (iy as usize * self.w + ix as usize) * self.c_in;
                        for (d, &s) in image[dst..dst + self.c_in].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, kernel, stride)?;
    if bias.len() != g.c_out {
        return shape_err(format!(
            "conv2d bias has {} values for {} output channels",
            bias.len(),
            g.c_out
        ));
    }
    let in_img = g.h * g.w * g.c_in;
    let out_img = g.h_out * g.w_out * g.c_out;
    let rows = g.rows_per_chunk();
    let pl = g.patch_len();
    let mut out = vec![T::ZERO; g.n * out_img];
    let x = input.data();
    let wk = kernel.data();
    let b = bias.data();

    out.par_chunks_mut(out_img).enumerate().for_each(|(n, out_n)| {
        let image = &x[n * in_img..(n + 1) * in_img];
        out_n
            .par_chunks_mut(rows * g.w_out * g.c_out)
            .enumerate()
            .for_each(|(ci, out_chunk)| {
                let oy0 = ci * rows;
                let oy1 = (oy0 + rows).min(g.h_out);
                let m = (oy1 - oy0) * g.w_out;
                let mut cols = vec![T::ZERO; m * pl];
                g.im2col(image, oy0, oy1, &mut cols);
                for row in out_chunk.chunks_mut(g.c_out) {
                    row.copy_from_slice(b);
                }
                matmul_into(&cols, wk, out_chunk, m, pl, g.c_out, false, false, T::ONE);
            });
    });
    Tensor::new(vec![g.n, g.h_out, g.w_out, g.c_out], out)
}

pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input, kernel, stride)?;
    if grad_out.shape() != [g.n, g.h_out, g.w_out, g.c_out] {
        return shape_err(format!(
            "conv2d output gradient has shape {:?}",
            grad_out.shape()
        ));
    }
    let in_img = g.h * g.w * g.c_in;
    let out_img = g.h_out * g.w_out * g.c_out;
    let rows = g.rows_per_chunk();
    let pl = g.patch_len();
    let x = input.data();
    let dy = grad_out.data();
    let wk = kernel.data();

    let per_image: Vec<(Vec<T>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let image = &x[n * in_img..(n + 1) * in_img];
            let dy_n = &dy[n * out_img..(n + 1) * out_img];
            let mut dw = vec![T::ZERO; pl * g.c_out];
            let mut dx = need_input_grad.then(|| vec![T::ZERO; in_img]);
            let mut cols = Vec::new();
            let mut dcols = Vec::new();
            let mut oy0 = 0;
            while oy0 < g.h_out {
                let oy1 = (oy0 + rows).min(g.h_out);
                let m = (oy1 - oy0) * g.w_out;
                cols.resize(m * pl, T::ZERO);
                g.im2col(image, oy0, oy1, &mut cols);
                let dy_chunk = &dy_n[oy0 * g.w_out * g.c_out..oy1 * g.w_out * g.c_out];
                matmul_into(&cols, dy_chunk, &mut dw, pl, m, g.c_out, true, false, T::ONE);
                if let Some(dx) = dx.as_mut() {
                    dcols.resize(m * pl, T::ZERO);
                    matmul_into(dy_chunk, wk, &mut dcols, m, g.c_out, pl, false, true, T::ZERO);
                    g.col2im(&dcols, oy0, oy1, dx);
                }
                oy0 = oy1;
            }
            (dw, dx)
        })
        .collect();

    let mut dw = vec![T::ZERO; pl * g.c_out];
    let mut dx = need_input_grad.then(|| Vec::with_capacity(g.n * in_img));
    for (dw_n, dx_n) in per_image {
        for (a, b) in dw.iter_mut().zip(dw_n) {
            *a += b;
        }
        if let (Some(dx), Some(dx_n)) = (dx.as_mut(), dx_n) {
            dx.extend(dx_n);
        }
    }
    let mut db = vec![T::ZERO; g.c_out];
    for row in dy.chunks(g.c_out) {
        for (a, &b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        kernel: Tensor::new(kernel.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![g.c_out], db)?,
    })
}
