//! Procedural grain-and-pore textures standing in for micro-CT slices in
//! tests and demos.

use rand::Rng;

use super::dataset::{ManifestEntry, RockClass, Sample, Split};
use super::resample::{downsample, ResampleKernel};
use super::GrayImage;
use crate::error::Result;
use crate::rng::stream;

struct Grain {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    level: f64,
}

/// A `w x h` slice of bright elliptical grains on a dark, slightly textured
/// pore background, with antialiased grain boundaries.
pub fn rock_texture(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = stream(seed, &[0x7e47]);
    let area = (w * h) as f64;
    let n_grains = (area / 180.0).ceil() as usize;
    let grains: Vec<Grain> = (0..n_grains)
        .map(|_| Grain {
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            rx: rng.random_range(2.5..9.0),
            ry: rng.random_range(2.5..9.0),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            level: rng.random_range(0.25..0.75),
        })
        .collect();
    let fx = rng.random_range(0.15..0.45);
    let fy = rng.random_range(0.15..0.45);
    let phase = rng.random_range(0.0..6.28);

    GrayImage::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        // microporosity: low-amplitude oscillating background
        let mut v = -0.6 + 0.08 * ((fx * px + phase).sin() * (fy * py).cos());
        for g in &grains {
            let (dx, dy) = (px - g.cx, py - g.cy);
            let (s, c) = g.angle.sin_cos();
            let u = (c * dx + s * dy) / g.rx;
            let t = (-s * dx + c * dy) / g.ry;
            let r = (u * u + t * t).sqrt();
            // signed distance in pixels, roughly, for a one-pixel soft edge
            let edge = ((1.0 - r) * g.rx.min(g.ry) + 0.5).clamp(0.0, 1.0);
            if edge > 0.0 {
                v = v * (1.0 - edge) + g.level * edge;
            }
        }
        v as f32
    })
}

/// `n` square textures of side `size` with bicubic LR counterparts, all in
/// the training split and cycling through the rock classes.
pub fn synthetic_samples(n: usize, size: usize, scale: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n)
        .map(|i| {
            let hr = rock_texture(size, size, seed.wrapping_add(i as u64));
            let lr = downsample(&hr, scale, ResampleKernel::Bicubic)?;
            let rock_class = RockClass::ALL[i % RockClass::ALL.len()];
            let id = format!("{rock_class}_{i:04}");
            Ok(Sample {
                entry: ManifestEntry {
                    hr_path: format!("hr/{id}.png"),
                    lr_path: format!("lr/{id}.png"),
                    id,
                    rock_class,
                    split: Split::Train,
                    kernel_used: ResampleKernel::Bicubic,
                    scale,
                },
                hr,
                lr,
            })
        })
        .collect()
}
