use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{export_params, import_params, push_conv, Checkpoint, Conv};
use crate::error::{shape_err, CheckpointError, Error, Result};
use crate::param::ParamSet;
use crate::rng::stream;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// VGG-style stack: blocks of 3x3 convolutions with ReLU, 2x2 max-pooling
/// between blocks, tapped after the last convolution of the last block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub block_convs: Vec<usize>,
    pub block_filters: Vec<usize>,
    pub input_channels: usize,
}

impl Default for FeatureConfig {
    /// VGG-19 up to its sixteenth convolution.
    fn default() -> Self {
        Self {
            block_convs: vec![2, 2, 4, 4, 4],
            block_filters: vec![64, 128, 256, 512, 512],
            input_channels: 3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_convs.is_empty()
            || self.block_convs.len() != self.block_filters.len()
            || self.block_convs.contains(&0)
            || self.block_filters.contains(&0)
            || self.input_channels == 0
        {
            return Err(Error::Config(format!("invalid feature network config {self:?}")));
        }
        Ok(())
    }

    /// Spatial reduction factor at the tap.
    pub fn downsampling(&self) -> usize {
        1 << (self.block_convs.len() - 1)
    }

    /// Smallest accepted input side.
    pub fn min_input(&self) -> usize {
        2 * self.downsampling()
    }
}

/// Frozen feature extractor; its parameters are never bound as trainable.
#[derive(Clone, Debug)]
pub struct FeatureNetwork<T: Real = f32> {
    config: FeatureConfig,
    params: ParamSet<T>,
    blocks: Vec<Vec<Conv>>,
}

const KIND: &str = "feature_network";

impl<T: Real> FeatureNetwork<T> {
    /// Seeded He-normal weights, standing in for pretrained ones.
    pub fn random(config: FeatureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0xfea7]);
        let mut params = ParamSet::new();
        let mut blocks = Vec::new();
        let mut c_in = config.input_channels;
        for (b, (&n, &f)) in config.block_convs.iter().zip(&config.block_filters).enumerate() {
            let mut convs = Vec::new();
            for i in 0..n {
                convs.push(push_conv(&mut params, &mut rng, &format!("block{}.conv{}", b + 1, i + 1), 3, c_in, f)?);
                c_in = f;
            }
            blocks.push(convs);
        }
        Ok(Self {
            config,
            params,
            blocks,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// `[N, H, W, 1] -> [N, H/2^(B-1), W/2^(B-1), C]`. Gradients reach `x` only.
    pub fn features(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let (_, h, w, c) = x.value().nhwc("feature network input")?;
        let min = self.config.min_input();
        if h < min || w < min {
            return shape_err(format!(
                "feature network needs inputs of at least {min}x{min}, got {h}x{w}"
            ));
        }
        let p = self.params.bind(tape, false);
        let mut y = if c == self.config.input_channels {
            x.clone()
        } else if c == 1 {
            tape.replicate_channels(x, self.config.input_channels)?
        } else {
            return shape_err(format!(
                "feature network takes 1 or {} channels, got {c}",
                self.config.input_channels
            ));
        };
        for (b, convs) in self.blocks.iter().enumerate() {
            if b > 0 {
                y = tape.max_pool2(&y)?;
            }
            for conv in convs {
                y = conv.apply(tape, &p, &y)?;
                y = tape.leaky_relu(&y, 0.0);
            }
        }
        Ok(y)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({ "kind": KIND, "feature": self.config });
        Checkpoint::new(config, export_params(&self.params, ""))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(CheckpointError::ConfigMismatch("not a feature network checkpoint".into()).into());
        }
        let config: FeatureConfig = serde_json::from_value(ckpt.config["feature"].clone())
            .map_err(|e| CheckpointError::Malformed(format!("feature config: {e}")))?;
        let mut net = Self::random(config, 0)?;
        import_params(&mut net.params, ckpt, "")?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
