use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use rocksr::imaging::augment::AugmentSpec;
use rocksr::imaging::dataset::{Dataset, DatasetManifest};
use rocksr::losses::LossWeights;
use rocksr::models::{Checkpoint, DiscriminatorConfig, FeatureConfig, FeatureNetwork, GeneratorConfig};
use rocksr::rng::{derive_seed, key_of};
use rocksr::train::{CsvSink, RunOptions, TrainSchedule, Trainer};
use rocksr::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::echo;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Must match the manifest when given.
    #[arg(long, value_parser = crate::parse_scale)]
    pub scale: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub srcnn_epochs: usize,
    #[arg(long, default_value_t = 150)]
    pub gan_epochs: usize,
    /// Iterations per epoch.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// HR patch side; LR patches are this divided by the scale.
    #[arg(long, default_value_t = 192)]
    pub hr_crop: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_generator: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_discriminator: f64,
    /// Weight of the feature-space loss.
    #[arg(long, default_value_t = 1e-5)]
    pub alpha: f64,
    /// Weight of the adversarial loss.
    #[arg(long, default_value_t = 5e-3)]
    pub beta: f64,
    /// Pixel loss only for all `srcnn + gan` epochs.
    #[arg(long)]
    pub srcnn_only: bool,
    /// Random blur and noise on LR patches.
    #[arg(long)]
    pub augment: bool,
    #[arg(long, default_value_t = 1.0)]
    pub blur_sigma_max: f64,
    #[arg(long, default_value_t = 0.005)]
    pub noise_variance_max: f64,
    #[arg(long, default_value_t = 16)]
    pub residual_blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub filters: usize,
    /// Discriminator conv widths, comma separated (8 values).
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64, 128, 128, 256, 256, 512, 512])]
    pub disc_filters: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub disc_dense: usize,
    /// Feature network block widths, comma separated (5 values).
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512, 512])]
    pub feature_filters: Vec<usize>,
    /// Pretrained feature network checkpoint; seeded random weights otherwise.
    #[arg(long)]
    pub feature_weights: Option<PathBuf>,
    /// Continue a run; schedule and architecture come from the checkpoint.
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub stop_after_epoch: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub smoothing_window: usize,
    #[arg(long, default_value_t = 4)]
    pub prefetch: usize,
}

fn feature_network(weights: Option<&Path>, config: FeatureConfig, seed: u64) -> Result<FeatureNetwork> {
    match weights {
        Some(p) => {
            let f = FeatureNetwork::load(p)?;
            if f.config() != &config {
                return Err(Error::Config(format!(
                    "feature weights in {} have config {:?}, expected {config:?}",
                    p.display(),
                    f.config()
                )));
            }
            Ok(f)
        }
        None => FeatureNetwork::random(config, derive_seed(seed, &[key_of("feature")])),
    }
}

fn dataset_scale(manifest: &DatasetManifest) -> Result<usize> {
    let mut scales = manifest.entries.iter().map(|e| e.scale);
    let first = scales
        .next()
        .ok_or_else(|| Error::Data("manifest has no entries".into()))?;
    if scales.any(|s| s != first) {
        return Err(Error::Data("manifest mixes scale factors".into()));
    }
    Ok(first)
}

fn fresh_trainer(args: &TrainArgs, scale: usize) -> Result<Trainer> {
    let weights = if args.srcnn_only {
        LossWeights::PIXEL_ONLY
    } else {
        LossWeights {
            alpha: args.alpha,
            beta: args.beta,
        }
    };
    let (srcnn_epochs, gan_epochs) = if args.srcnn_only {
        (args.srcnn_epochs + args.gan_epochs, 0)
    } else {
        (args.srcnn_epochs, args.gan_epochs)
    };
    let schedule = TrainSchedule {
        srcnn_epochs,
        gan_epochs,
        iterations_per_epoch: args.iters,
        batch_size: args.batch_size,
        hr_crop: args.hr_crop,
        lr_generator: args.lr_generator,
        lr_discriminator: args.lr_discriminator,
        loss_weights: weights,
        seed: args.seed,
        augment: AugmentSpec {
            enabled: args.augment,
            blur_sigma_max: args.blur_sigma_max,
            noise_variance_max: args.noise_variance_max,
            seed: args.seed,
        },
        moving_average_window: args.smoothing_window,
        prefetch_depth: args.prefetch,
    };
    let generator = GeneratorConfig {
        n_residual_blocks: args.residual_blocks,
        n_filters: args.filters,
        scale,
        ..Default::default()
    };
    let discriminator = DiscriminatorConfig {
        input_size: args.hr_crop,
        block_filters: args.disc_filters.clone(),
        dense_units: args.disc_dense,
        ..Default::default()
    };
    let feature = FeatureConfig {
        block_filters: args.feature_filters.clone(),
        ..Default::default()
    };
    let feature = feature_network(args.feature_weights.as_deref(), feature, args.seed)?;
    Trainer::from_configs(schedule, generator, discriminator, feature)
}

fn resumed_trainer(args: &TrainArgs, path: &Path) -> Result<Trainer> {
    let ckpt = Checkpoint::load(path)?;
    let config: FeatureConfig = serde_json::from_value(ckpt.config["feature"].clone())?;
    let seed = ckpt.config["schedule"]["seed"]
        .as_u64()
        .ok_or_else(|| Error::Data(format!("{} has no schedule seed", path.display())))?;
    let feature = feature_network(args.feature_weights.as_deref(), config, seed)?;
    let trainer = Trainer::from_checkpoint(&ckpt, feature)?;
    log::info!(
        "resuming at step {}; schedule and architecture come from the checkpoint",
        trainer.next_step()
    );
    Ok(trainer)
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::read_jsonl(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))?;
    let scale = dataset_scale(&manifest)?;
    if let Some(s) = args.scale.filter(|&s| s != scale) {
        return Err(Error::Config(format!("--scale {s} but the manifest is at scale {scale}")).into());
    }
    let mut trainer = match &args.from_checkpoint {
        Some(path) => resumed_trainer(&args, path)?,
        None => fresh_trainer(&args, scale)?,
    };
    if trainer.generator().config().scale != scale {
        return Err(Error::Config(format!(
            "checkpoint generator is at scale {}, the manifest at {scale}",
            trainer.generator().config().scale
        ))
        .into());
    }
    echo::write(
        &args.out.join("config.json"),
        "train",
        &json!({
            "args": &args,
            "schedule": trainer.schedule(),
            "generator": trainer.generator().config(),
            "discriminator": trainer.discriminator().config(),
            "feature": trainer.feature_network().config(),
            "start_step": trainer.next_step(),
        }),
    )?;

    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let data = Dataset::load(&manifest, base)?;
    let mut sink = CsvSink::open(&args.out, args.from_checkpoint.is_some())?;
    let opts = RunOptions {
        checkpoint_dir: Some(args.out.join("checkpoints")),
        stop_after_epoch: args.stop_after_epoch,
    };
    let summary = trainer.run(&data, &mut sink, &opts)?;
    let report = json!({
        "gan_start_step": summary.gan_start_step,
        "end_step": summary.end_step,
        "best_val_psnr": summary.best_val_psnr,
        "checkpoints": summary.checkpoints,
    });
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )
    .map_err(Error::from)?;
    log::info!("finished at step {}", summary.end_step);
    Ok(())
}
