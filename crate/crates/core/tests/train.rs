use rocksr::imaging::dataset::{Dataset, PatchBatch, Sample, Split};
use rocksr::imaging::synthetic::synthetic_samples;
use rocksr::losses::{l1_loss, LossWeights};
use rocksr::models::{
    Checkpoint, DiscriminatorConfig, FeatureConfig, FeatureNetwork, Generator, GeneratorConfig,
};
use rocksr::train::{
    validate, CsvSink, MetricLog, NullSink, Phase, RunOptions, StepControl, TrainSchedule, Trainer,
};
use rocksr::Error;

const CROP: usize = 32;

fn data(n: usize, valid: usize) -> Dataset {
    let mut samples: Vec<Sample> = synthetic_samples(n, 48, 4, 7).unwrap();
    for s in samples.iter_mut().take(valid) {
        s.entry.split = Split::Valid;
    }
    Dataset::new(samples).unwrap()
}

fn feature() -> FeatureNetwork {
    let cfg = FeatureConfig {
        block_filters: vec![2, 3, 4, 4, 4],
        ..Default::default()
    };
    FeatureNetwork::random(cfg, 11).unwrap()
}

fn generator_config() -> GeneratorConfig {
    GeneratorConfig {
        n_residual_blocks: 2,
        n_filters: 4,
        ..Default::default()
    }
}

fn disc_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        input_size: CROP,
        block_filters: vec![2, 2, 4, 4, 4, 4, 4, 4],
        dense_units: 8,
        leaky_slope: 0.2,
    }
}

fn schedule(srcnn: usize, gan: usize, iters: usize) -> TrainSchedule {
    TrainSchedule {
        srcnn_epochs: srcnn,
        gan_epochs: gan,
        iterations_per_epoch: iters,
        batch_size: 2,
        hr_crop: CROP,
        lr_generator: 1e-3,
        lr_discriminator: 1e-3,
        seed: 5,
        ..Default::default()
    }
}

fn trainer(s: TrainSchedule) -> Trainer {
    Trainer::from_configs(s, generator_config(), disc_config(), feature()).unwrap()
}

#[test]
fn toy_two_phase_run() {
    let data = data(4, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(schedule(2, 2, 10));
    let disc_before = t.discriminator().params().clone();
    let feat_before = t.feature_network().params().clone();
    let mut log = MetricLog::new(5);
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };

    // phase 1 leaves the discriminator alone
    let summary = t
        .run(&data, &mut log, &RunOptions { stop_after_epoch: Some(2), ..opts.clone() })
        .unwrap();
    assert_eq!(summary.end_step, 20);
    assert!(t.discriminator().params().values_equal(&disc_before));

    let summary = t.run(&data, &mut log, &opts).unwrap();
    assert_eq!(summary.gan_start_step, 20);
    assert_eq!(summary.end_step, 40);
    assert_eq!(log.records.len(), 40);
    assert!(log.records.windows(2).all(|w| w[1].step == w[0].step + 1));
    for r in &log.records {
        assert_eq!(r.phase, if r.step < 20 { Phase::Srcnn } else { Phase::Gan });
        let mut values = vec![r.l1, r.g_total, r.train_psnr];
        values.extend([r.vgg, r.adv, r.d_loss, r.p_hr_mean, r.p_sr_mean].into_iter().flatten());
        assert!(values.iter().all(|v| v.is_finite()), "{r:?}");
        assert_eq!(r.d_loss.is_some(), r.phase == Phase::Gan);
        assert_eq!(r.val_psnr.is_some(), (r.step + 1) % 10 == 0);
    }
    assert!(!t.discriminator().params().values_equal(&disc_before));
    assert!(t.feature_network().params().values_equal(&feat_before));
    assert_eq!(summary.checkpoints.len(), 2);

    let last = dir.path().join("epoch_0004.ckpt");
    let g = Generator::<f32>::from_checkpoint(&Checkpoint::load(&last).unwrap(), Some(&generator_config())).unwrap();
    assert!(g.params().values_equal(t.generator().params()));
    assert_eq!(log.smoothed(|r| r.l1).len(), 40);
}

fn batch_l1(t: &Trainer, batch: &PatchBatch) -> f64 {
    l1_loss(&t.generator().infer(&batch.lr).unwrap(), &batch.hr).unwrap()
}

#[test]
fn pixel_phase_overfits_small_set() {
    let data = data(8, 0);
    let mut t = trainer(TrainSchedule {
        batch_size: 8,
        ..schedule(1, 0, 300)
    });
    // a fixed probe batch drawn from the same training images
    let probe = t.batch_for(&data, 1 << 40).unwrap();
    let initial = batch_l1(&t, &probe);
    t.run(&data, &mut NullSink, &RunOptions::default()).unwrap();
    let last = batch_l1(&t, &probe);
    assert!(last * 5.0 <= initial, "initial {initial}, final {last}");
}

#[test]
fn zero_weighted_gan_step_equals_pixel_step() {
    let data = data(4, 0);
    let s = TrainSchedule {
        loss_weights: LossWeights::PIXEL_ONLY,
        ..schedule(1, 1, 3)
    };
    let mut a = trainer(s.clone());
    let mut b = trainer(s);
    for step in 0..3 {
        let batch = a.batch_for(&data, step).unwrap();
        let ra = a.srcnn_step(step, &batch).unwrap();
        let rb = b.gan_step(step, &batch, StepControl::BOTH).unwrap();
        assert_eq!(ra.l1, rb.l1);
        assert!(a.generator().params().values_equal(b.generator().params()));
    }
}

#[test]
fn identical_runs_write_identical_metrics() {
    let data = data(4, 1);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut t = trainer(TrainSchedule {
            augment: rocksr::imaging::augment::AugmentSpec {
                enabled: true,
                ..Default::default()
            },
            ..schedule(1, 1, 4)
        });
        let mut sink = CsvSink::open(dir.path(), false).unwrap();
        t.run(&data, &mut sink, &RunOptions::default()).unwrap();
        drop(sink);
        (
            std::fs::read(dir.path().join("metrics.csv")).unwrap(),
            std::fs::read(dir.path().join("augment.csv")).unwrap(),
        )
    };
    let (m1, a1) = run();
    let (m2, a2) = run();
    assert_eq!(m1, m2);
    assert_eq!(a1, a2);
    // header plus 8 steps, and 2 draws per step
    assert_eq!(String::from_utf8(m1).unwrap().lines().count(), 9);
    assert_eq!(String::from_utf8(a1).unwrap().lines().count(), 17);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = data(4, 1);
    let s = schedule(1, 2, 5);
    let mut full = trainer(s.clone());
    let mut full_log = MetricLog::new(1);
    full.run(&data, &mut full_log, &RunOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = trainer(s);
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after_epoch: Some(2),
    };
    first.run(&data, &mut NullSink, &opts).unwrap();
    let path = dir.path().join("epoch_0002.ckpt");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);

    let mut resumed = Trainer::load(&path, feature()).unwrap();
    assert_eq!(resumed.next_step(), 10);
    let mut log = MetricLog::new(1);
    resumed.run(&data, &mut log, &RunOptions::default()).unwrap();
    assert_eq!(log.records.len(), 5);
    for (r, f) in log.records.iter().zip(&full_log.records[10..]) {
        assert_eq!(r.step, f.step);
        for (x, y) in [(r.l1, f.l1), (r.g_total, f.g_total), (r.d_loss.unwrap(), f.d_loss.unwrap())] {
            assert!((x - y).abs() <= 1e-6, "step {}: {x} vs {y}", r.step);
        }
    }
    assert!(resumed.generator().params().values_equal(full.generator().params()));
}

#[test]
fn resume_rejects_other_feature_network() {
    let data = data(4, 0);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(schedule(1, 0, 2));
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    t.run(&data, &mut NullSink, &opts).unwrap();
    let other = FeatureNetwork::random(FeatureConfig::default(), 0).unwrap();
    assert!(Trainer::load(&dir.path().join("epoch_0001.ckpt"), other).is_err());
}

#[test]
fn divergence_aborts_and_keeps_last_checkpoint() {
    let data = data(4, 0);
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(schedule(1, 0, 3));
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    t.run(&data, &mut NullSink, &opts).unwrap();
    let good = std::fs::read(dir.path().join("epoch_0001.ckpt")).unwrap();

    // continue with an absurd learning rate until the loss overflows
    let mut ck = Checkpoint::from_bytes(&good).unwrap();
    ck.config["schedule"]["srcnn_epochs"] = 50.into();
    ck.config["adam_g"]["config"]["learning_rate"] = 1e35.into();
    let mut wild = Trainer::from_checkpoint(&ck, feature()).unwrap();
    let err = wild.run(&data, &mut NullSink, &opts).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert_eq!(std::fs::read(dir.path().join("epoch_0001.ckpt")).unwrap(), good);
}

#[test]
fn empty_training_split_is_an_error() {
    let mut samples = synthetic_samples(2, 48, 4, 0).unwrap();
    samples.iter_mut().for_each(|s| s.entry.split = Split::Test);
    let data = Dataset::new(samples).unwrap();
    let mut t = trainer(schedule(1, 0, 2));
    assert!(matches!(t.run(&data, &mut NullSink, &RunOptions::default()), Err(Error::Data(_))));
}

#[test]
fn validation_reports() {
    let data = data(5, 3);
    let valid = data.split(Split::Valid);
    let t = trainer(schedule(1, 0, 1));
    let r = validate(t.generator(), &valid).unwrap();
    assert_eq!(r.per_image.len(), 3);
    // untrained generator does worse than plain bicubic
    assert!(r.sr.mean < r.bicubic.mean);

    // a target that the generator reproduces exactly
    let mut samples: Vec<Sample> = valid.into_iter().cloned().collect();
    for s in &mut samples {
        s.hr = rocksr::train::super_resolve(t.generator(), &s.lr).unwrap();
    }
    let perfect: Vec<&Sample> = samples.iter().collect();
    let r = validate(t.generator(), &perfect).unwrap();
    assert!(r.per_image.iter().all(|s| s.sr_psnr == f64::INFINITY));
}
