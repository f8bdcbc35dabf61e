use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::dataset::{RockClass, Sample};
use crate::imaging::resample::{upsample, ResampleKernel};
use crate::imaging::GrayImage;
use crate::losses::psnr;
use crate::models::Generator;

/// Mean and population variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, variance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub rock_class: RockClass,
    pub sr_psnr: f64,
    pub bicubic_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sr: Summary,
    pub bicubic: Summary,
    pub per_image: Vec<ImageScore>,
}

/// Super-resolves one full image; the output is clamped to `[-1, 1]`.
pub fn super_resolve(generator: &Generator<f32>, lr: &GrayImage) -> Result<GrayImage> {
    let sr = generator.infer(&lr.to_tensor())?;
    let mut img = GrayImage::from_tensor(&sr, 0, lr.source_bit_depth)?;
    img.resolution_um = lr.resolution_um.map(|r| r / generator.config().scale as f64);
    Ok(img)
}

/// Whole-image PSNR of the generator and of bicubic upsampling, one image at a time.
pub fn validate(generator: &Generator<f32>, samples: &[&Sample]) -> Result<ValidationReport> {
    let scale = generator.config().scale;
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let hr = s.hr.to_tensor();
        let sr = super_resolve(generator, &s.lr)?;
        let bicubic = upsample(&s.lr, scale, ResampleKernel::Bicubic)?;
        per_image.push(ImageScore {
            id: s.entry.id.clone(),
            rock_class: s.entry.rock_class,
            sr_psnr: psnr(&sr.to_tensor(), &hr)?,
            bicubic_psnr: psnr(&bicubic.to_tensor(), &hr)?,
        });
    }
    let sr: Vec<f64> = per_image.iter().map(|r| r.sr_psnr).collect();
    let bi: Vec<f64> = per_image.iter().map(|r| r.bicubic_psnr).collect();
    Ok(ValidationReport {
        sr: Summary::of(&sr),
        bicubic: Summary::of(&bi),
        per_image,
    })
}
