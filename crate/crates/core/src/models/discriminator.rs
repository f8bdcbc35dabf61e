use serde::{Deserialize, Serialize};

use super::{push_strided_conv, Conv};
use crate::error::{shape_err, Error, Result};
use crate::ops::norm::{update_running, BatchStats};
use crate::param::{he_normal, ParamSet};
use crate::rng::stream;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Side length of the square input; the dense layer is sized from it.
    pub input_size: usize,
    /// Output channels of each stride-2 block.
    pub block_filters: Vec<usize>,
    pub dense_units: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: 192,
            block_filters: vec![64, 64, 128, 128, 256, 256, 512, 512],
            dense_units: 1024,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0
            || self.dense_units == 0
            || self.block_filters.is_empty()
            || self.block_filters.contains(&0)
        {
            return Err(Error::Config(format!("invalid discriminator config {self:?}")));
        }
        Ok(())
    }

    /// Spatial side after all stride-2 blocks.
    pub fn final_side(&self) -> usize {
        self.block_filters
            .iter()
            .fold(self.input_size, |s, _| s.div_ceil(2))
    }

    fn flat_features(&self) -> usize {
        let side = self.final_side();
        side * side * self.block_filters.last().copied().unwrap_or(0)
    }
}

/// How batch-normalization layers pick their statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Current batch statistics; they are returned for a running update.
    Batch,
    /// Stored running statistics.
    Running,
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv,
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Real = f32> {
    config: DiscriminatorConfig,
    params: ParamSet<T>,
    blocks: Vec<Block>,
    running: Vec<(Tensor<T>, Tensor<T>)>,
    dense1: (usize, usize),
    dense2: (usize, usize),
}

pub struct DiscriminatorOutput<T: Real> {
    /// `[N, 1]` probabilities of "real".
    pub prob: Var<T>,
    /// Per-block batch statistics when run in [`BnMode::Batch`].
    pub stats: Vec<BatchStats>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, &[0xd15c]);
        let mut params = ParamSet::new();
        let mut blocks = Vec::new();
        let mut running = Vec::new();
        let mut c_in = 1;
        for (i, &f) in config.block_filters.iter().enumerate() {
            let conv = push_strided_conv(&mut params, &mut rng, &format!("blocks.{i}.conv"), 3, c_in, f, 2)?;
            let gamma = params.push(format!("blocks.{i}.bn.gamma"), Tensor::full(vec![f], T::ONE))?;
            let beta = params.push(format!("blocks.{i}.bn.beta"), Tensor::zeros(vec![f]))?;
            blocks.push(Block { conv, gamma, beta });
            running.push((Tensor::zeros(vec![f]), Tensor::full(vec![f], T::ONE)));
            c_in = f;
        }
        let (flat, units) = (config.flat_features(), config.dense_units);
        let w1 = params.push("dense1.weight", he_normal(vec![flat, units], flat, &mut rng))?;
        let b1 = params.push("dense1.bias", Tensor::zeros(vec![units]))?;
        let w2 = params.push("dense2.weight", he_normal(vec![units, 1], units, &mut rng))?;
        let b2 = params.push("dense2.bias", Tensor::zeros(vec![1]))?;
        Ok(Self {
            config,
            params,
            blocks,
            running,
            dense1: (w1, b1),
            dense2: (w2, b2),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// `(running_mean, running_var)` of each block.
    pub fn running_stats(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: Vec<(Tensor<T>, Tensor<T>)>) -> Result<()> {
        let ok = stats.len() == self.running.len()
            && stats
                .iter()
                .zip(&self.running)
                .all(|((m, v), (rm, rv))| m.shape() == rm.shape() && v.shape() == rv.shape());
        if !ok {
            return shape_err("running statistics do not match the discriminator blocks");
        }
        self.running = stats;
        Ok(())
    }

    /// `[N, S, S, 1] -> [N, 1]` where `S` is the configured input size.
    pub fn forward(
        &self,
        tape: &Tape<T>,
        p: &[Var<T>],
        x: &Var<T>,
        mode: BnMode,
    ) -> Result<DiscriminatorOutput<T>> {
        let (n, h, w, c) = x.value().nhwc("discriminator input")?;
        let s = self.config.input_size;
        if (h, w, c) != (s, s, 1) {
            return shape_err(format!(
                "discriminator expects {s}x{s}x1 inputs, got {h}x{w}x{c}"
            ));
        }
        let slope = self.config.leaky_slope;
        let mut stats = Vec::new();
        let mut y = x.clone();
        for (b, (rm, rv)) in self.blocks.iter().zip(&self.running) {
            y = b.conv.apply(tape, p, &y)?;
            y = tape.leaky_relu(&y, slope);
            y = match mode {
                BnMode::Batch => {
                    let (out, st) = tape.batchnorm_train(&y, &p[b.gamma], &p[b.beta])?;
                    stats.push(st);
                    out
                }
                BnMode::Running => tape.batchnorm_eval(&y, &p[b.gamma], &p[b.beta], rm, rv)?,
            };
        }
        let y = tape.reshape(&y, vec![n, self.config.flat_features()])?;
        let y = tape.dense(&y, &p[self.dense1.0], &p[self.dense1.1])?;
        let y = tape.leaky_relu(&y, slope);
        let y = tape.dense(&y, &p[self.dense2.0], &p[self.dense2.1])?;
        Ok(DiscriminatorOutput {
            prob: tape.sigmoid(&y),
            stats,
        })
    }

    /// Folds batch statistics from a [`BnMode::Batch`] pass into the running averages.
    pub fn update_running(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.running.len() {
            return shape_err(format!(
                "expected statistics for {} blocks, got {}",
                self.running.len(),
                stats.len()
            ));
        }
        for ((rm, rv), st) in self.running.iter_mut().zip(stats) {
            update_running(rm, &st.mean);
            update_running(rv, &st.var);
        }
        Ok(())
    }

    /// Probabilities without recording a graph.
    pub fn predict(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape, false);
        let out = self.forward(&tape, &p, &Var::constant(x.clone()), mode)?;
        Ok(out.prob.value().clone())
    }
}
