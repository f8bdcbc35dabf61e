//! Generator, discriminator and frozen feature network, plus the checkpoint
//! container they are saved in.

pub mod checkpoint;
pub mod discriminator;
pub mod feature;
pub mod generator;

pub use checkpoint::Checkpoint;
pub use discriminator::{BnMode, Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use feature::{FeatureConfig, FeatureNetwork};
pub use generator::{Generator, GeneratorConfig};

use rand::Rng;

use crate::error::Result;
use crate::param::{he_normal, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Indices of a convolution's kernel and bias within a [`ParamSet`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
}

impl Conv {
    pub fn apply<T: Real>(&self, tape: &Tape<T>, p: &[Var<T>], x: &Var<T>) -> Result<Var<T>> {
        tape.conv2d(x, &p[self.weight], &p[self.bias], self.stride)
    }
}

pub(crate) fn push_conv<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
) -> Result<Conv> {
    push_strided_conv(params, rng, name, k, c_in, c_out, 1)
}

pub(crate) fn push_strided_conv<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
) -> Result<Conv> {
    let weight = params.push(
        format!("{name}.weight"),
        he_normal(vec![k, k, c_in, c_out], k * k * c_in, rng),
    )?;
    let bias = params.push(format!("{name}.bias"), Tensor::zeros(vec![c_out]))?;
    Ok(Conv { weight, bias, stride })
}

/// Copies every tensor of `params` out as f32, in order.
pub(crate) fn export_params<T: Real>(params: &ParamSet<T>, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    params
        .iter()
        .map(|p| (format!("{prefix}{}", p.name()), p.value().cast()))
        .collect()
}

/// Overwrites every parameter from `ckpt`, failing before any change if a
/// tensor is missing or mis-shaped.
pub(crate) fn import_params<T: Real>(params: &mut ParamSet<T>, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    let mut values = Vec::with_capacity(params.len());
    for p in params.iter() {
        let t = ckpt.tensor_shaped(&format!("{prefix}{}", p.name()), p.value().shape())?;
        values.push(t.cast::<T>());
    }
    for (i, v) in values.into_iter().enumerate() {
        params.get_mut(i).set_value(v)?;
    }
    Ok(())
}
