//! Two-phase training: pixel-loss pretraining of the generator, then
//! alternating discriminator and generator updates.

pub mod metrics;
pub mod validate;

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{CheckpointError, Error, Result};
use crate::imaging::augment::AugmentSpec;
use crate::imaging::dataset::{Dataset, PatchBatch, PatchSpec, Split};
use crate::losses::{d_loss_var, g_loss_var, psnr_from_l2, GanTerms, LossWeights};
use crate::models::{
    export_params, import_params, BnMode, Checkpoint, Discriminator, DiscriminatorConfig, FeatureNetwork, Generator,
    GeneratorConfig,
};
use crate::param::ParamSet;
use crate::rng::{key_of, stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use metrics::{moving_average, CsvSink, MetricLog, MetricSink, NullSink, Phase, StepRecord};
pub use validate::{super_resolve, validate, ImageScore, Summary, ValidationReport};

/// `d_loss` above this for [`DIVERGENCE_PATIENCE`] consecutive iterations aborts training.
pub const DIVERGENCE_D_LOSS: f64 = 100.0;
pub const DIVERGENCE_PATIENCE: u32 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub srcnn_epochs: usize,
    pub gan_epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub hr_crop: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub augment: AugmentSpec,
    pub moving_average_window: usize,
    pub prefetch_depth: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            srcnn_epochs: 100,
            gan_epochs: 150,
            iterations_per_epoch: 1000,
            batch_size: 16,
            hr_crop: 192,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            loss_weights: LossWeights::default(),
            seed: 0,
            augment: AugmentSpec::default(),
            moving_average_window: 1000,
            prefetch_depth: 4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("batch_size", self.batch_size),
            ("hr_crop", self.hr_crop),
            ("moving_average_window", self.moving_average_window),
            ("prefetch_depth", self.prefetch_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.srcnn_epochs + self.gan_epochs == 0 {
            return Err(Error::Config("schedule has no epochs".into()));
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.loss_weights.validate()
    }

    /// First iteration of the adversarial phase.
    pub fn gan_start(&self) -> u64 {
        (self.srcnn_epochs * self.iterations_per_epoch) as u64
    }

    pub fn total_steps(&self) -> u64 {
        ((self.srcnn_epochs + self.gan_epochs) * self.iterations_per_epoch) as u64
    }

    pub fn phase_of(&self, step: u64) -> Phase {
        if step < self.gan_start() {
            Phase::Srcnn
        } else {
            Phase::Gan
        }
    }
}

/// Which networks an adversarial iteration updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepControl {
    pub update_generator: bool,
    pub update_discriminator: bool,
}

impl StepControl {
    pub const BOTH: Self = Self {
        update_generator: true,
        update_discriminator: true,
    };
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Per-epoch checkpoints go here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stops after this many completed epochs (counted from step 0).
    pub stop_after_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub gan_start_step: u64,
    pub end_step: u64,
    pub best_val_psnr: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct Trainer {
    schedule: TrainSchedule,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    feature: FeatureNetwork<f32>,
    adam_g: AdamState<f32>,
    adam_d: AdamState<f32>,
    next_step: u64,
    high_d_streak: u32,
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{name} became {v}")))
    }
}

fn numerical(e: Error) -> Error {
    match e {
        Error::NonFiniteGradient(p) => Error::Numerical(format!("non-finite gradient in `{p}`")),
        other => other,
    }
}

fn export_adam(adam: &AdamState<f32>, params: &ParamSet<f32>, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    let names = params.names();
    let m = adam.first_moment().iter().zip(&names).map(|(t, n)| (format!("{prefix}m/{n}"), t.clone()));
    let v = adam.second_moment().iter().zip(&names).map(|(t, n)| (format!("{prefix}v/{n}"), t.clone()));
    m.chain(v).collect()
}

fn import_adam(ckpt: &Checkpoint, params: &ParamSet<f32>, prefix: &str, key: &str) -> Result<AdamState<f32>> {
    let meta = &ckpt.config[key];
    let config: AdamConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| CheckpointError::Malformed(format!("{key} config: {e}")))?;
    let steps = meta["steps"]
        .as_u64()
        .ok_or_else(|| CheckpointError::Malformed(format!("{key} step count")))?;
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for p in params.iter() {
        let shape = p.value().shape();
        m.push(ckpt.tensor_shaped(&format!("{prefix}m/{}", p.name()), shape)?.clone());
        v.push(ckpt.tensor_shaped(&format!("{prefix}v/{}", p.name()), shape)?.clone());
    }
    AdamState::from_parts(config, steps, m, v, params)
}

const KIND: &str = "training";

impl Trainer {
    pub fn new(
        schedule: TrainSchedule,
        generator: Generator<f32>,
        discriminator: Discriminator<f32>,
        feature: FeatureNetwork<f32>,
    ) -> Result<Self> {
        schedule.validate()?;
        let scale = generator.config().scale;
        if schedule.hr_crop % scale != 0 {
            return Err(Error::Config(format!(
                "hr_crop {} is not divisible by scale {scale}",
                schedule.hr_crop
            )));
        }
        if schedule.gan_epochs > 0 {
            if discriminator.config().input_size != schedule.hr_crop {
                return Err(Error::Config(format!(
                    "discriminator input {} differs from hr_crop {}",
                    discriminator.config().input_size,
                    schedule.hr_crop
                )));
            }
            if schedule.hr_crop < feature.config().min_input() {
                return Err(Error::Config(format!(
                    "hr_crop {} is below the feature network minimum {}",
                    schedule.hr_crop,
                    feature.config().min_input()
                )));
            }
        }
        let adam_g = AdamState::new(AdamConfig::with_learning_rate(schedule.lr_generator), generator.params());
        let adam_d = AdamState::new(
            AdamConfig::with_learning_rate(schedule.lr_discriminator),
            discriminator.params(),
        );
        Ok(Self {
            schedule,
            generator,
            discriminator,
            feature,
            adam_g,
            adam_d,
            next_step: 0,
            high_d_streak: 0,
        })
    }

    /// Builds generator and discriminator from seeds derived from `schedule.seed`.
    pub fn from_configs(
        schedule: TrainSchedule,
        generator: GeneratorConfig,
        discriminator: DiscriminatorConfig,
        feature: FeatureNetwork<f32>,
    ) -> Result<Self> {
        let g = Generator::new(generator, stream_seed(schedule.seed, "generator"))?;
        let d = Discriminator::new(discriminator, stream_seed(schedule.seed, "discriminator"))?;
        Self::new(schedule, g, d, feature)
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.discriminator
    }

    pub fn feature_network(&self) -> &FeatureNetwork<f32> {
        &self.feature
    }

    /// Index of the next iteration to run.
    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    pub fn patch_spec(&self) -> PatchSpec {
        PatchSpec {
            batch_size: self.schedule.batch_size,
            hr_crop: self.schedule.hr_crop,
            scale: self.generator.config().scale,
        }
    }

    /// The batch of iteration `step`; depends only on the seed and `step`.
    pub fn batch_for(&self, data: &Dataset, step: u64) -> Result<PatchBatch> {
        make_batch(data, &self.patch_spec(), &self.schedule, step)
    }

    /// Runs one iteration of the phase `step` falls in, without advancing the step counter.
    pub fn train_step(&mut self, step: u64, batch: &PatchBatch) -> Result<StepRecord> {
        match self.schedule.phase_of(step) {
            Phase::Srcnn => self.srcnn_step(step, batch),
            Phase::Gan => self.gan_step(step, batch, StepControl::BOTH),
        }
    }

    /// Pixel-loss generator update.
    pub fn srcnn_step(&mut self, step: u64, batch: &PatchBatch) -> Result<StepRecord> {
        let tape = Tape::new();
        let p = self.generator.params().bind(&tape, true);
        let sr = self.generator.forward(&tape, &p, &Var::constant(batch.lr.clone()))?;
        let hr = Var::constant(batch.hr.clone());
        let (loss, parts) = g_loss_var(&tape, &sr, &hr, None, LossWeights::PIXEL_ONLY)?;
        finite("l1 loss", parts.l1)?;
        let l2 = crate::losses::l2_loss(sr.value(), &batch.hr)?;
        let grads = tape.backward(&loss)?;
        self.generator.params_mut().accumulate(&grads, &p);
        drop((p, sr, tape));
        self.adam_g.step(self.generator.params_mut()).map_err(numerical)?;
        Ok(StepRecord {
            step,
            phase: Phase::Srcnn,
            l1: parts.l1,
            vgg: None,
            adv: None,
            g_total: parts.total,
            d_loss: None,
            p_hr_mean: None,
            p_sr_mean: None,
            train_psnr: psnr_from_l2(l2),
            val_psnr: None,
        })
    }

    /// Discriminator update on (HR, detached SR), then a generator update
    /// against the updated discriminator.
    pub fn gan_step(&mut self, step: u64, batch: &PatchBatch, control: StepControl) -> Result<StepRecord> {
        let tape = Tape::new();
        let pg = self.generator.params().bind(&tape, true);
        let sr = self.generator.forward(&tape, &pg, &Var::constant(batch.lr.clone()))?;
        let l2 = crate::losses::l2_loss(sr.value(), &batch.hr)?;

        let (d_loss, p_hr_mean, p_sr_mean) = self.discriminator_step(&batch.hr, sr.value(), control.update_discriminator)?;

        let hr = Var::constant(batch.hr.clone());
        let phi_sr = self.feature.features(&tape, &sr)?;
        let phi_hr = self.feature.features(&Tape::no_grad(), &hr)?;
        let pd = self.discriminator.params().bind(&tape, false);
        let p_sr = self.discriminator.forward(&tape, &pd, &sr, BnMode::Running)?.prob;
        let gan = GanTerms {
            phi_sr: &phi_sr,
            phi_hr: &phi_hr,
            p_sr: &p_sr,
        };
        let (loss, parts) = g_loss_var(&tape, &sr, &hr, Some(gan), self.schedule.loss_weights)?;
        finite("l1 loss", parts.l1)?;
        finite("perceptual loss", parts.vgg)?;
        finite("adversarial loss", parts.adv)?;
        finite("generator loss", parts.total)?;
        if control.update_generator {
            let grads = tape.backward(&loss)?;
            self.generator.params_mut().accumulate(&grads, &pg);
            drop((pg, pd, sr, phi_sr, p_sr, loss, tape));
            self.adam_g.step(self.generator.params_mut()).map_err(numerical)?;
        }
        if d_loss > DIVERGENCE_D_LOSS {
            self.high_d_streak += 1;
            if self.high_d_streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Numerical(format!(
                    "discriminator loss above {DIVERGENCE_D_LOSS} for {DIVERGENCE_PATIENCE} consecutive iterations"
                )));
            }
        } else {
            self.high_d_streak = 0;
        }
        Ok(StepRecord {
            step,
            phase: Phase::Gan,
            l1: parts.l1,
            vgg: Some(parts.vgg),
            adv: Some(parts.adv),
            g_total: parts.total,
            d_loss: Some(d_loss),
            p_hr_mean: Some(p_hr_mean),
            p_sr_mean: Some(p_sr_mean),
            train_psnr: psnr_from_l2(l2),
            val_psnr: None,
        })
    }

    fn discriminator_step(&mut self, hr: &Tensor<f32>, sr: &Tensor<f32>, update: bool) -> Result<(f64, f64, f64)> {
        let tape = Tape::new();
        let p = self.discriminator.params().bind(&tape, update);
        let real = self.discriminator.forward(&tape, &p, &Var::constant(hr.clone()), BnMode::Batch)?;
        let fake = self.discriminator.forward(&tape, &p, &Var::constant(sr.clone()), BnMode::Batch)?;
        let loss = d_loss_var(&tape, &real.prob, &fake.prob)?;
        let value = finite("discriminator loss", loss.item() as f64)?;
        let (p_hr, p_sr) = (real.prob.value().mean(), fake.prob.value().mean());
        if update {
            let grads = tape.backward(&loss)?;
            self.discriminator.params_mut().accumulate(&grads, &p);
            drop((p, loss, tape));
            self.adam_d.step(self.discriminator.params_mut()).map_err(numerical)?;
            self.discriminator.update_running(&real.stats)?;
            self.discriminator.update_running(&fake.stats)?;
        }
        Ok((value, p_hr, p_sr))
    }

    /// Trains from the current step to the end of the schedule (or `opts.stop_after_epoch`).
    ///
    /// Checkpoints are written after every completed epoch; on a numerical
    /// abort the previous epoch's checkpoint is the last one on disk.
    pub fn run(&mut self, data: &Dataset, sink: &mut dyn MetricSink, opts: &RunOptions) -> Result<TrainSummary> {
        if data.split(Split::Train).is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let iters = self.schedule.iterations_per_epoch as u64;
        let mut end = self.schedule.total_steps();
        if let Some(e) = opts.stop_after_epoch {
            end = end.min(e as u64 * iters);
        }
        let valid = data.split(Split::Valid);
        let mut summary = TrainSummary {
            gan_start_step: self.schedule.gan_start(),
            end_step: self.next_step,
            best_val_psnr: None,
            checkpoints: Vec::new(),
        };
        if self.next_step >= end {
            return Ok(summary);
        }
        let spec = self.patch_spec();
        let schedule = self.schedule.clone();
        let start = self.next_step;
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel(schedule.prefetch_depth);
            scope.spawn(move || {
                for step in start..end {
                    if tx.send(make_batch(data, &spec, &schedule, step)).is_err() {
                        break;
                    }
                }
            });
            for step in start..end {
                let batch = rx
                    .recv()
                    .map_err(|_| Error::Data("batch producer stopped".into()))??;
                if !batch.augment.is_empty() {
                    sink.augment(step, &batch.augment)?;
                }
                let mut rec = self.train_step(step, &batch)?;
                self.next_step = step + 1;
                if self.next_step % iters == 0 {
                    if !valid.is_empty() {
                        let report = validate(&self.generator, &valid)?;
                        rec.val_psnr = Some(report.sr.mean);
                        summary.best_val_psnr = Some(match summary.best_val_psnr {
                            Some(b) if b >= report.sr.mean => b,
                            _ => report.sr.mean,
                        });
                    }
                    if let Some(dir) = &opts.checkpoint_dir {
                        let path = dir.join(format!("epoch_{:04}.ckpt", self.next_step / iters));
                        self.checkpoint().save(&path)?;
                        log::info!("wrote {}", path.display());
                        summary.checkpoints.push(path);
                    }
                }
                sink.record(&rec)?;
            }
            Ok(())
        })?;
        summary.end_step = self.next_step;
        Ok(summary)
    }

    /// Complete training state: networks, running statistics, optimizer moments and step.
    pub fn checkpoint(&self) -> Checkpoint {
        let config = json!({
            "kind": KIND,
            "discriminator": self.discriminator.config(),
            "feature": self.feature.config(),
            "schedule": self.schedule,
            "next_step": self.next_step,
            "high_d_streak": self.high_d_streak,
            "adam_g": { "config": self.adam_g.config, "steps": self.adam_g.step_count() },
            "adam_d": { "config": self.adam_d.config, "steps": self.adam_d.step_count() },
        });
        let mut ckpt = self.generator.to_checkpoint(config);
        let mut tensors = ckpt.tensors().to_vec();
        tensors.extend(export_params(self.discriminator.params(), "discriminator/"));
        for (i, (m, v)) in self.discriminator.running_stats().iter().enumerate() {
            tensors.push((format!("discriminator_running/{i}/mean"), m.clone()));
            tensors.push((format!("discriminator_running/{i}/var"), v.clone()));
        }
        tensors.extend(export_adam(&self.adam_g, self.generator.params(), "adam_g/"));
        tensors.extend(export_adam(&self.adam_d, self.discriminator.params(), "adam_d/"));
        ckpt = Checkpoint::new(ckpt.config.clone(), tensors);
        ckpt
    }

    /// Restores a trainer saved by [`Trainer::checkpoint`]. The feature
    /// network is supplied by the caller and must match the stored config.
    pub fn from_checkpoint(ckpt: &Checkpoint, feature: FeatureNetwork<f32>) -> Result<Self> {
        let cfg = &ckpt.config;
        if cfg.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(CheckpointError::ConfigMismatch("not a training checkpoint".into()).into());
        }
        let malformed = |what: &str| CheckpointError::Malformed(format!("training state: {what}"));
        let schedule: TrainSchedule =
            serde_json::from_value(cfg["schedule"].clone()).map_err(|e| malformed(&e.to_string()))?;
        let d_config: DiscriminatorConfig =
            serde_json::from_value(cfg["discriminator"].clone()).map_err(|e| malformed(&e.to_string()))?;
        let f_config: crate::models::FeatureConfig =
            serde_json::from_value(cfg["feature"].clone()).map_err(|e| malformed(&e.to_string()))?;
        if &f_config != feature.config() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "feature network {:?} differs from the checkpoint's {f_config:?}",
                feature.config()
            ))
            .into());
        }
        let generator = Generator::from_checkpoint(ckpt, None)?;
        let mut discriminator = Discriminator::new(d_config, 0)?;
        import_params(discriminator.params_mut(), ckpt, "discriminator/")?;
        let mut running = Vec::new();
        for (i, (m, v)) in discriminator.running_stats().iter().enumerate() {
            running.push((
                ckpt.tensor_shaped(&format!("discriminator_running/{i}/mean"), m.shape())?.clone(),
                ckpt.tensor_shaped(&format!("discriminator_running/{i}/var"), v.shape())?.clone(),
            ));
        }
        discriminator.set_running_stats(running)?;
        let adam_g = import_adam(ckpt, generator.params(), "adam_g/", "adam_g")?;
        let adam_d = import_adam(ckpt, discriminator.params(), "adam_d/", "adam_d")?;
        let next_step = cfg["next_step"].as_u64().ok_or_else(|| malformed("next_step"))?;
        let high_d_streak = cfg["high_d_streak"].as_u64().ok_or_else(|| malformed("high_d_streak"))? as u32;
        let mut t = Self::new(schedule, generator, discriminator, feature)?;
        t.adam_g = adam_g;
        t.adam_d = adam_d;
        t.next_step = next_step;
        t.high_d_streak = high_d_streak;
        Ok(t)
    }

    pub fn load(path: &Path, feature: FeatureNetwork<f32>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, feature)
    }
}

fn stream_seed(seed: u64, what: &str) -> u64 {
    crate::rng::derive_seed(seed, &[key_of(what)])
}

fn make_batch(data: &Dataset, spec: &PatchSpec, schedule: &TrainSchedule, step: u64) -> Result<PatchBatch> {
    let mut rng = stream(schedule.seed, &[key_of("batch"), step]);
    let augment = schedule.augment.enabled.then_some(&schedule.augment);
    data.sample_patch_batch(Split::Train, spec, augment, &mut rng)
}
