//! Pixel, perceptual and adversarial losses, PSNR, and the weighted
//! generator objective. Every loss is a mean over all elements, batch included.
//!
//! Plain functions take tensors and return `f64`; the `*_var` variants build
//! the same quantity on a tape.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::loss;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Label of high-resolution (real) images.
pub const Y_HR: f64 = 1.0;
/// Label of super-resolved (generated) images.
pub const Y_SR: f64 = 0.0;

/// Weights of the perceptual (`alpha`) and adversarial (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            beta: 5e-3,
        }
    }
}

impl LossWeights {
    pub const PIXEL_ONLY: Self = Self { alpha: 0.0, beta: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn l2_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    loss::mean_sq_diff(sr, hr)
}

pub fn l1_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    loss::mean_abs_diff(sr, hr)
}

/// Peak signal-to-noise ratio for a peak-to-peak range of 2; infinite when `l2 == 0`.
pub fn psnr_from_l2(l2: f64) -> f64 {
    if l2 == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (4.0 / l2).log10()
    }
}

pub fn psnr<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_l2(l2_loss(sr, hr)?))
}

/// PSNR of every image in an `[N, H, W, C]` batch.
pub fn psnr_per_image<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<Vec<f64>> {
    if sr.shape() != hr.shape() {
        return shape_err(format!("psnr: shapes {:?} and {:?} differ", sr.shape(), hr.shape()));
    }
    let (n, _, _, _) = sr.nhwc("psnr input")?;
    (0..n).map(|i| psnr(&sr.batch_item(i), &hr.batch_item(i))).collect()
}

/// Binary cross entropy of probabilities against a constant label.
pub fn bxe<T: Real>(p: &Tensor<T>, real: bool) -> f64 {
    loss::bce(p, real)
}

/// Discriminator objective: HR images labelled real, SR images labelled fake.
pub fn d_loss<T: Real>(p_hr: &Tensor<T>, p_sr: &Tensor<T>) -> f64 {
    bxe(p_hr, true) + bxe(p_sr, false)
}

/// Mean squared difference of feature maps.
pub fn vgg_loss<T: Real>(phi_sr: &Tensor<T>, phi_hr: &Tensor<T>) -> Result<f64> {
    loss::mean_sq_diff(phi_sr, phi_hr)
}

/// Generator's adversarial term: SR images scored against the real label.
pub fn adv_loss<T: Real>(p_sr: &Tensor<T>) -> f64 {
    bxe(p_sr, true)
}

/// Raw loss components and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l1: f64,
    pub vgg: f64,
    pub adv: f64,
    pub total: f64,
}

/// `l1 + alpha * vgg + beta * adv`.
pub fn combine(l1: f64, vgg: f64, adv: f64, w: LossWeights) -> LossComponents {
    LossComponents {
        l1,
        vgg,
        adv,
        total: l1 + w.alpha * vgg + w.beta * adv,
    }
}

pub fn g_loss<T: Real>(
    sr: &Tensor<T>,
    hr: &Tensor<T>,
    phi_sr: &Tensor<T>,
    phi_hr: &Tensor<T>,
    p_sr: &Tensor<T>,
    weights: LossWeights,
) -> Result<LossComponents> {
    Ok(combine(
        l1_loss(sr, hr)?,
        vgg_loss(phi_sr, phi_hr)?,
        adv_loss(p_sr),
        weights,
    ))
}

pub fn d_loss_var<T: Real>(tape: &Tape<T>, p_hr: &Var<T>, p_sr: &Var<T>) -> Result<Var<T>> {
    let real = tape.bce(p_hr, true);
    let fake = tape.bce(p_sr, false);
    tape.weighted_sum(&[(&real, 1.0), (&fake, 1.0)])
}

/// Optional generator-loss inputs beyond the pixel term.
pub struct GanTerms<'a, T: Real> {
    pub phi_sr: &'a Var<T>,
    pub phi_hr: &'a Var<T>,
    pub p_sr: &'a Var<T>,
}

/// Generator objective on a tape. Without `gan` terms, or with both weights
/// zero, the result is the L1 var itself and nothing else is recorded.
///
/// Components not computed are reported as NaN.
pub fn g_loss_var<T: Real>(
    tape: &Tape<T>,
    sr: &Var<T>,
    hr: &Var<T>,
    gan: Option<GanTerms<'_, T>>,
    weights: LossWeights,
) -> Result<(Var<T>, LossComponents)> {
    let l1 = tape.mean_abs_diff(sr, hr)?;
    let l1_value = l1.item().to_f64();
    let Some(gan) = gan else {
        let parts = LossComponents {
            total: l1_value,
            ..combine(l1_value, f64::NAN, f64::NAN, weights)
        };
        return Ok((l1, parts));
    };
    let vgg = tape.mean_sq_diff(gan.phi_sr, gan.phi_hr)?;
    let adv = tape.bce(gan.p_sr, true);
    let parts = LossComponents {
        total: l1_value,
        ..combine(l1_value, vgg.item().to_f64(), adv.item().to_f64(), weights)
    };
    let mut terms = vec![(&l1, 1.0)];
    if weights.alpha != 0.0 {
        terms.push((&vgg, weights.alpha));
    }
    if weights.beta != 0.0 {
        terms.push((&adv, weights.beta));
    }
    if terms.len() == 1 {
        return Ok((l1, parts));
    }
    let total = tape.weighted_sum(&terms)?;
    let total_value = total.item().to_f64();
    Ok((
        total,
        LossComponents {
            total: total_value,
            ..parts
        },
    ))
}
