//! Blur and noise augmentation of low-resolution inputs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub enabled: bool,
    pub blur_sigma_max: f64,
    /// Upper bound of the noise variance, in `[0, 1]` intensity units.
    pub noise_variance_max: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            blur_sigma_max: 1.0,
            noise_variance_max: 0.005,
            seed: 0,
        }
    }
}

/// One sampled pair of augmentation strengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub blur_sigma: f64,
    pub noise_variance: f64,
}

impl AugmentSpec {
    /// Samples sigma and variance uniformly from `[0, max]`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        AugmentDraw {
            blur_sigma: rng.random::<f64>() * self.blur_sigma_max,
            noise_variance: rng.random::<f64>() * self.noise_variance_max,
        }
    }
}

/// Blur, then noise.
pub fn apply<R: Rng + ?Sized>(img: &GrayImage, draw: AugmentDraw, rng: &mut R) -> GrayImage {
    add_white_noise(&gaussian_blur(img, draw.blur_sigma), draw.noise_variance, rng)
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn blur_line(src: &[f64], taps: &[f64], out: &mut [f64]) {
    let r = (taps.len() / 2) as isize;
    let n = src.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let (mut acc, mut norm) = (0.0, 0.0);
        for (k, &w) in taps.iter().enumerate() {
            let j = i as isize + k as isize - r;
            if (0..n).contains(&j) {
                acc += w * src[j as usize];
                norm += w;
            }
        }
        *o = acc / norm;
    }
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)`, weights renormalized
/// over in-bounds taps. `sigma == 0` returns the image unchanged.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let taps = gaussian_taps(sigma);
    let (w, h) = (img.width(), img.height());
    let mut tmp: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    let mut line = vec![0.0; w.max(h)];
    for y in 0..h {
        let row = &mut tmp[y * w..(y + 1) * w];
        blur_line(row, &taps, &mut line[..w]);
        row.copy_from_slice(&line[..w]);
    }
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = tmp[y * w + x];
        }
        blur_line(&col, &taps, &mut line[..h]);
        for y in 0..h {
            tmp[y * w + x] = line[y];
        }
    }
    let pixels = tmp.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect();
    GrayImage::from_raw_unchecked(w, h, pixels, img)
}

/// Adds i.i.d. zero-mean Gaussian noise and clamps to `[-1, 1]`.
///
/// `variance` is in `[0, 1]` intensity units; on the `[-1, 1]` scale the
/// standard deviation is therefore `2 * sqrt(variance)`.
pub fn add_white_noise<R: Rng + ?Sized>(img: &GrayImage, variance: f64, rng: &mut R) -> GrayImage {
    if variance <= 0.0 {
        return img.clone();
    }
    let std = 2.0 * variance.sqrt();
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            (v as f64 + std * z).clamp(-1.0, 1.0) as f32
        })
        .collect();
    GrayImage::from_raw_unchecked(img.width(), img.height(), pixels, img)
}
