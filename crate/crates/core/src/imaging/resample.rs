//! Separable resampling with antialiased downscaling.
//!
//! Pixel centers sit at half-integers: output sample `j` of a resize with
//! ratio `s = in/out` maps to input coordinate `(j + 0.5) * s - 0.5`. When
//! shrinking, the kernel is stretched by `s` so each output pixel averages a
//! footprint proportional to the scale. Taps falling outside the image are
//! dropped and the remaining weights renormalized.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleKernel {
    Bicubic,
    Box,
    Triangle,
    Lanczos2,
    Lanczos3,
}

/// The kernels drawn for randomized low-resolution synthesis.
pub const RANDOM_KERNELS: [ResampleKernel; 4] = [
    ResampleKernel::Box,
    ResampleKernel::Triangle,
    ResampleKernel::Lanczos2,
    ResampleKernel::Lanczos3,
];

pub const ALL_KERNELS: [ResampleKernel; 5] = [
    ResampleKernel::Bicubic,
    ResampleKernel::Box,
    ResampleKernel::Triangle,
    ResampleKernel::Lanczos2,
    ResampleKernel::Lanczos3,
];

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

impl ResampleKernel {
    /// Half-width of the kernel at unit scale.
    pub fn support_radius(self) -> f64 {
        match self {
            ResampleKernel::Box => 0.5,
            ResampleKernel::Triangle => 1.0,
            ResampleKernel::Bicubic | ResampleKernel::Lanczos2 => 2.0,
            ResampleKernel::Lanczos3 => 3.0,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            ResampleKernel::Box => {
                if (-0.5..0.5).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            ResampleKernel::Triangle => (1.0 - ax).max(0.0),
            // Keys cubic convolution, a = -0.5
            ResampleKernel::Bicubic => {
                let a = -0.5;
                if ax <= 1.0 {
                    (a + 2.0) * ax.powi(3) - (a + 3.0) * ax * ax + 1.0
                } else if ax < 2.0 {
                    a * ax.powi(3) - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a
                } else {
                    0.0
                }
            }
            ResampleKernel::Lanczos2 | ResampleKernel::Lanczos3 => {
                let r = self.support_radius();
                if ax < r {
                    sinc(x) * sinc(x / r)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResampleKernel::Bicubic => "bicubic",
            ResampleKernel::Box => "box",
            ResampleKernel::Triangle => "triangle",
            ResampleKernel::Lanczos2 => "lanczos2",
            ResampleKernel::Lanczos3 => "lanczos3",
        }
    }
}

impl fmt::Display for ResampleKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResampleKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KERNELS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown resampling kernel `{s}`")))
    }
}

/// Uniform draw over box, triangle, lanczos2 and lanczos3.
pub fn pick_random_kernel<R: Rng + ?Sized>(rng: &mut R) -> ResampleKernel {
    RANDOM_KERNELS[rng.random_range(0..RANDOM_KERNELS.len())]
}

/// Taps for one output sample: first input index and normalized weights.
#[derive(Clone, Debug)]
pub struct Taps {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Per-output-sample taps for resizing a line of `in_len` samples to `out_len`.
pub fn line_taps(in_len: usize, out_len: usize, kernel: ResampleKernel) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    let stretch = ratio.max(1.0);
    let radius = kernel.support_radius() * stretch;
    (0..out_len)
        .map(|j| {
            let center = (j as f64 + 0.5) * ratio - 0.5;
            let lo = ((center - radius).floor() as isize).max(0) as usize;
            let hi = ((center + radius).ceil() as isize).min(in_len as isize - 1) as usize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|i| kernel.weight((i as f64 - center) / stretch))
                .collect();
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            Taps { start: lo, weights }
        })
        .collect()
}

/// Resizes to `out_w x out_h`, horizontally then vertically.
pub fn resize(img: &GrayImage, out_w: usize, out_h: usize, kernel: ResampleKernel) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return shape_err("resize target must be non-empty");
    }
    let (w, h) = (img.width(), img.height());
    let htaps = line_taps(w, out_w, kernel);
    let vtaps = line_taps(h, out_h, kernel);
    let src = img.pixels();

    let mut rows = vec![0.0f64; h * out_w];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, t) in htaps.iter().enumerate() {
            rows[y * out_w + x] = t
                .weights
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * line[t.start + k] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; out_w * out_h];
    for (y, t) in vtaps.iter().enumerate() {
        for x in 0..out_w {
            let v: f64 = t
                .weights
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * rows[(t.start + k) * out_w + x])
                .sum();
            out[y * out_w + x] = v.clamp(-1.0, 1.0) as f32;
        }
    }
    Ok(GrayImage::from_raw_unchecked(out_w, out_h, out, img))
}

/// Antialiased integer-factor downscale. Both sides must be divisible by `scale`.
pub fn downsample(img: &GrayImage, scale: usize, kernel: ResampleKernel) -> Result<GrayImage> {
    if scale == 0 || img.width() % scale != 0 || img.height() % scale != 0 {
        return shape_err(format!(
            "{}x{} image is not divisible by scale {scale}",
            img.width(),
            img.height()
        ));
    }
    let mut out = resize(img, img.width() / scale, img.height() / scale, kernel)?;
    out.resolution_um = img.resolution_um.map(|r| r * scale as f64);
    Ok(out)
}

/// Integer-factor upscale, e.g. the bicubic baseline.
pub fn upsample(img: &GrayImage, scale: usize, kernel: ResampleKernel) -> Result<GrayImage> {
    if scale == 0 {
        return shape_err("upsample scale must be positive");
    }
    let mut out = resize(img, img.width() * scale, img.height() * scale, kernel)?;
    out.resolution_um = img.resolution_um.map(|r| r / scale as f64);
    Ok(out)
}
