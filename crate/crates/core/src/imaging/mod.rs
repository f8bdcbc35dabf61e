//! Grayscale images, file I/O, synthetic low-resolution generation,
//! augmentation, dataset manifests and patch sampling.

pub mod augment;
pub mod dataset;
pub mod diffmap;
pub mod resample;
pub mod synthetic;

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    /// Raw sample value to `[-1, 1]`.
    pub fn normalize(self, raw: u16) -> f32 {
        (2.0 * raw as f64 / self.max_value() - 1.0) as f32
    }

    /// `[-1, 1]` to a raw sample, rounding half away from zero and clamping.
    pub fn quantize(self, value: f32) -> u16 {
        let v = ((value as f64 + 1.0) * 0.5 * self.max_value()).round();
        v.clamp(0.0, self.max_value()) as u16
    }
}

/// Single-channel image with pixels normalized to `[-1, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pub source_bit_depth: BitDepth,
    /// Microns per pixel; carried along, never used in computation.
    pub resolution_um: Option<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, bit_depth: BitDepth) -> Result<Self> {
        if width == 0 || height == 0 || width * height != pixels.len() {
            return shape_err(format!(
                "{width}x{height} image cannot hold {} pixels",
                pixels.len()
            ));
        }
        if let Some(bad) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!(
                "pixel value {bad} outside the normalized range [-1, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_bit_depth: bit_depth,
            resolution_um: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height], BitDepth::Eight)
            .expect("valid constant image")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y).clamp(-1.0, 1.0))
            .collect();
        Self::new(width, height, pixels, BitDepth::Eight).expect("valid generated image")
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, pixels: Vec<f32>, like: &Self) -> Self {
        Self {
            width,
            height,
            pixels,
            source_bit_depth: like.source_bit_depth,
            resolution_um: like.resolution_um,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Copies out a `w x h` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return shape_err(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{} image",
                self.width, self.height
            ));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.pixels[row * self.width + x..][..w]);
        }
        Ok(Self::from_raw_unchecked(w, h, pixels, self))
    }

    /// Largest centered crop whose sides are multiples of `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Self> {
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    /// `[1, H, W, 1]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, self.height, self.width, 1], self.pixels.clone())
            .expect("image dims are positive")
    }

    /// Reads batch item `index` of an `[N, H, W, 1]` tensor, clamping to `[-1, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, index: usize, bit_depth: BitDepth) -> Result<Self> {
        let (n, h, w, c) = t.nhwc("image tensor")?;
        if c != 1 || index >= n {
            return shape_err(format!(
                "cannot take image {index} from tensor {:?}",
                t.shape()
            ));
        }
        let pixels = t.data()[index * h * w..(index + 1) * h * w]
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
            .collect();
        Self::new(w, h, pixels, bit_depth)
    }

    /// Round-trips the pixels through the integer grid of `bit_depth`.
    pub fn quantized(&self, bit_depth: BitDepth) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| bit_depth.normalize(bit_depth.quantize(v)))
            .collect();
        Self {
            pixels,
            source_bit_depth: bit_depth,
            ..self.clone()
        }
    }
}

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(image_err(path, "unsupported extension; expected .png or .pgm")),
    }
}

/// Loads a single-channel 8- or 16-bit PNG or binary PGM.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (pixels, depth) = match decoded {
        DynamicImage::ImageLuma8(buf) => (
            buf.into_raw()
                .into_iter()
                .map(|v| BitDepth::Eight.normalize(v as u16))
                .collect::<Vec<_>>(),
            BitDepth::Eight,
        ),
        DynamicImage::ImageLuma16(buf) => (
            buf.into_raw()
                .into_iter()
                .map(|v| BitDepth::Sixteen.normalize(v))
                .collect(),
            BitDepth::Sixteen,
        ),
        other => {
            return Err(image_err(
                path,
                format!("expected a single-channel image, found {:?}", other.color()),
            ))
        }
    };
    GrayImage::new(w, h, pixels, depth).map_err(|e| image_err(path, e.to_string()))
}

/// Writes `img` as PNG or binary PGM (chosen by extension) at `bit_depth`.
pub fn save_image(img: &GrayImage, path: &Path, bit_depth: BitDepth) -> Result<()> {
    let format = format_for(path)?;
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match bit_depth {
        BitDepth::Eight => {
            let raw = img.pixels.iter().map(|&v| bit_depth.quantize(v) as u8).collect();
            DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, raw).expect("buffer size"),
            )
        }
        BitDepth::Sixteen => {
            let raw = img.pixels.iter().map(|&v| bit_depth.quantize(v)).collect();
            DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, raw).expect("buffer size"),
            )
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    dynamic
        .save_with_format(path, format)
        .map_err(|e| image_err(path, e.to_string()))
}
