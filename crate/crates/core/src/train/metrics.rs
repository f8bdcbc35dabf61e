use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imaging::augment::AugmentDraw;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Pixel loss only, discriminator idle.
    Srcnn,
    /// Alternating discriminator and generator updates.
    Gan,
}

/// One training iteration. Terms not computed in a phase are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub l1: f64,
    pub vgg: Option<f64>,
    pub adv: Option<f64>,
    pub g_total: f64,
    pub d_loss: Option<f64>,
    pub p_hr_mean: Option<f64>,
    pub p_sr_mean: Option<f64>,
    pub train_psnr: f64,
    /// Set on the last iteration of an epoch when a validation split exists.
    pub val_psnr: Option<f64>,
}

/// Receives every record as it is produced.
pub trait MetricSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()>;

    /// Augmentation strengths drawn for the batch of `step`.
    fn augment(&mut self, _step: u64, _draws: &[AugmentDraw]) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _rec: &StepRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Serialize)]
struct DrawRow {
    step: u64,
    slot: usize,
    blur_sigma: f64,
    noise_variance: f64,
}

/// Streams records to `metrics.csv` and augmentation draws to `augment.csv`.
pub struct CsvSink {
    metrics: csv::Writer<File>,
    draws: csv::Writer<File>,
}

impl CsvSink {
    /// Creates both files in `dir`, or appends to them when `append` is set
    /// and they already exist.
    pub fn open(dir: &Path, append: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<csv::Writer<File>> {
            let path = dir.join(name);
            let resume = append && path.exists();
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(resume)
                .truncate(!resume)
                .open(&path)?;
            Ok(csv::WriterBuilder::new().has_headers(!resume).from_writer(file))
        };
        Ok(Self {
            metrics: open("metrics.csv")?,
            draws: open("augment.csv")?,
        })
    }
}

impl MetricSink for CsvSink {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.metrics.serialize(rec)?;
        self.metrics.flush()?;
        Ok(())
    }

    fn augment(&mut self, step: u64, draws: &[AugmentDraw]) -> Result<()> {
        for (slot, d) in draws.iter().enumerate() {
            self.draws.serialize(DrawRow {
                step,
                slot,
                blur_sigma: d.blur_sigma,
                noise_variance: d.noise_variance,
            })?;
        }
        self.draws.flush()?;
        Ok(())
    }
}

/// In-memory history of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub records: Vec<StepRecord>,
    pub window: usize,
}

impl MetricLog {
    pub fn new(window: usize) -> Self {
        Self {
            records: Vec::new(),
            window,
        }
    }

    pub fn series(&self, field: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(field).collect()
    }

    pub fn smoothed(&self, field: impl Fn(&StepRecord) -> f64) -> Vec<f64> {
        moving_average(&self.series(field), self.window.max(1))
    }
}

impl MetricSink for MetricLog {
    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// Trailing mean over the last `min(window, i + 1)` values.
///
/// # Panics
/// If `window == 0`.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "moving average window must be positive");
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let part = &series[lo..=i];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect()
}
