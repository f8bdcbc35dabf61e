use super::{BitDepth, GrayImage};
use crate::error::{shape_err, Result};

/// Per-pixel absolute difference in normalized units (range `[0, 2]`).
#[derive(Clone, Debug)]
pub struct DifferenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Largest difference; the 8-bit export maps this value to 255.
    pub scale: f64,
}

pub fn difference_map(a: &GrayImage, b: &GrayImage) -> Result<DifferenceMap> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return shape_err(format!(
            "difference map needs equal sizes, got {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    let values: Vec<f64> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .collect();
    let scale = values.iter().copied().fold(0.0, f64::max);
    Ok(DifferenceMap {
        width: a.width(),
        height: a.height(),
        values,
        scale,
    })
}

impl DifferenceMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// 8-bit image with `0 -> black` and `scale -> white`.
    pub fn to_image(&self) -> GrayImage {
        let pixels = self
            .values
            .iter()
            .map(|&d| {
                let unit = if self.scale > 0.0 { d / self.scale } else { 0.0 };
                BitDepth::Eight.normalize((unit * 255.0).round() as u16)
            })
            .collect();
        GrayImage::new(self.width, self.height, pixels, BitDepth::Eight)
            .expect("difference map dims are positive")
    }
}
