use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{export_params, import_params, push_conv, Checkpoint, Conv};
use crate::error::{shape_err, CheckpointError, Error, Result};
use crate::param::ParamSet;
use crate::rng::stream;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

const PREFIX: &str = "generator/";

fn yes() -> bool {
    true
}

/// Residual super-resolution generator without batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_residual_blocks: usize,
    pub n_filters: usize,
    pub kernel_size: usize,
    pub scale: usize,
    /// Adds the head features to the residual trunk output before upsampling.
    #[serde(default = "yes")]
    pub global_skip: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_residual_blocks: 16,
            n_filters: 64,
            kernel_size: 3,
            scale: 4,
            global_skip: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.n_filters == 0 {
            return Err(Error::Config("n_filters must be positive".into()));
        }
        Ok(())
    }

    /// Number of x2 pixel-shuffle stages.
    pub fn upsample_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv,
    alpha: usize,
    conv2: Conv,
}

#[derive(Clone, Debug)]
struct Upsample {
    conv: Conv,
    alpha: usize,
}

#[derive(Clone, Debug)]
pub struct Generator<T: Real = f32> {
    config: GeneratorConfig,
    params: ParamSet<T>,
    head: Conv,
    blocks: Vec<ResBlock>,
    tail: Conv,
    upsample: Vec<Upsample>,
    out: Conv,
}

impl<T: Real> Generator<T> {
    /// He-normal convolutions, zero biases, PReLU slopes 0.25.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0x6e4e]);
        let mut params = ParamSet::new();
        let (k, f) = (config.kernel_size, config.n_filters);
        let head = push_conv(&mut params, &mut rng, "head", k, 1, f)?;
        let mut blocks = Vec::with_capacity(config.n_residual_blocks);
        for i in 0..config.n_residual_blocks {
            let conv1 = push_conv(&mut params, &mut rng, &format!("blocks.{i}.conv1"), k, f, f)?;
            let alpha = params.push(format!("blocks.{i}.prelu"), Tensor::full(vec![f], T::from_f64(0.25)))?;
            let conv2 = push_conv(&mut params, &mut rng, &format!("blocks.{i}.conv2"), k, f, f)?;
            blocks.push(ResBlock { conv1, alpha, conv2 });
        }
        let tail = push_conv(&mut params, &mut rng, "tail", k, f, f)?;
        let mut upsample = Vec::new();
        for i in 0..config.upsample_stages() {
            let conv = push_conv(&mut params, &mut rng, &format!("upsample.{i}.conv"), k, f, 4 * f)?;
            let alpha = params.push(format!("upsample.{i}.prelu"), Tensor::full(vec![f], T::from_f64(0.25)))?;
            upsample.push(Upsample { conv, alpha });
        }
        let out = push_conv(&mut params, &mut rng, "out", k, f, 1)?;
        Ok(Self {
            config,
            params,
            head,
            blocks,
            tail,
            upsample,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// `[N, H, W, 1] -> [N, scale*H, scale*W, 1]`; `p` holds one var per
    /// parameter in [`ParamSet`] order.
    pub fn forward(&self, tape: &Tape<T>, p: &[Var<T>], lr: &Var<T>) -> Result<Var<T>> {
        let (_, h, w, c) = lr.value().nhwc("generator input")?;
        if c != 1 {
            return shape_err(format!("generator expects 1 channel, got {c}"));
        }
        let k = self.config.kernel_size;
        if h < k || w < k {
            return shape_err(format!("generator input {h}x{w} is smaller than the {k}x{k} kernel"));
        }
        if p.len() != self.params.len() {
            return shape_err(format!(
                "generator has {} parameters, {} vars supplied",
                self.params.len(),
                p.len()
            ));
        }
        let head = self.head.apply(tape, p, lr)?;
        let mut x = head.clone();
        for b in &self.blocks {
            let y = b.conv1.apply(tape, p, &x)?;
            let y = tape.prelu(&y, &p[b.alpha])?;
            let y = b.conv2.apply(tape, p, &y)?;
            x = tape.add(&x, &y)?;
        }
        x = self.tail.apply(tape, p, &x)?;
        if self.config.global_skip {
            x = tape.add(&x, &head)?;
        }
        for u in &self.upsample {
            let y = u.conv.apply(tape, p, &x)?;
            let y = tape.pixel_shuffle(&y, 2)?;
            x = tape.prelu(&y, &p[u.alpha])?;
        }
        self.out.apply(tape, p, &x)
    }

    /// Forward pass with nothing recorded.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape, false);
        let y = self.forward(&tape, &p, &Var::constant(lr.clone()))?;
        Ok(y.value().clone())
    }

    /// Tensors under `generator/` and the config under `"generator"`.
    pub fn to_checkpoint(&self, mut config: Value) -> Checkpoint {
        config["generator"] = serde_json::to_value(self.config).expect("config serializes");
        Checkpoint::new(config, export_params(&self.params, PREFIX))
    }

    /// Restores the generator from any checkpoint that carries one. With
    /// `expected`, a differing stored config is rejected.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&GeneratorConfig>) -> Result<Self> {
        let stored = ckpt
            .config
            .get("generator")
            .ok_or_else(|| CheckpointError::ConfigMismatch("checkpoint holds no generator".into()))?;
        let config: GeneratorConfig = serde_json::from_value(stored.clone())
            .map_err(|e| CheckpointError::Malformed(format!("generator config: {e}")))?;
        if let Some(want) = expected {
            if *want != config {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "checkpoint generator {config:?} differs from requested {want:?}"
                ))
                .into());
            }
        }
        let mut g = Self::new(config, 0)?;
        import_params(&mut g.params, ckpt, PREFIX)?;
        Ok(g)
    }

    /// Zeroes the tail convolution, so the residual trunk contributes nothing.
    pub fn zero_tail(&mut self) {
        for idx in [self.tail.weight, self.tail.bias] {
            self.params.get_mut(idx).value_mut().fill(T::ZERO);
        }
    }
}
