//! Dataset manifests, the 8:1:1 split, and random patch batches.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{self, AugmentDraw, AugmentSpec};
use super::resample::ResampleKernel;
use super::{load_image, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RockClass {
    Sandstone,
    Carbonate,
    Coal,
}

impl RockClass {
    pub const ALL: [RockClass; 3] = [RockClass::Sandstone, RockClass::Carbonate, RockClass::Coal];

    pub fn name(self) -> &'static str {
        match self {
            RockClass::Sandstone => "sandstone",
            RockClass::Carbonate => "carbonate",
            RockClass::Coal => "coal",
        }
    }

    /// Class from a `sandstone_` / `carbonate_` / `coal_` filename prefix.
    pub fn from_filename(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| lower.starts_with(&format!("{}_", c.name())))
    }
}

impl fmt::Display for RockClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RockClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown rock class `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// An HR/LR pair before split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub hr_path: String,
    pub lr_path: String,
    pub rock_class: RockClass,
    pub kernel_used: ResampleKernel,
    pub scale: usize,
}

/// One manifest line. Field order here is the serialized order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: String,
    pub lr_path: String,
    pub rock_class: RockClass,
    pub split: Split,
    pub kernel_used: ResampleKernel,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Seed of the shuffle that produced the split; not stored in the JSONL file.
    pub shuffle_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Seeded shuffle, then 80/10/10 by position; remainders go to train.
pub fn split_dataset(pairs: Vec<PairRecord>, seed: u64) -> Result<DatasetManifest> {
    if pairs.len() < 10 {
        return Err(Error::Data(format!(
            "an 8:1:1 split needs at least 10 entries, got {}",
            pairs.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(Error::Data(format!("duplicate entry id `{}`", dup.id)));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = pairs.len();
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(pos, idx)| {
            let p = &pairs[idx];
            let split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            ManifestEntry {
                id: p.id.clone(),
                hr_path: p.hr_path.clone(),
                lr_path: p.lr_path.clone(),
                rock_class: p.rock_class,
                split,
                kernel_used: p.kernel_used,
                scale: p.scale,
            }
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        shuffle_seed: Some(seed),
    })
}

impl DatasetManifest {
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for e in &self.entries {
            match e.split {
                Split::Train => c.train += 1,
                Split::Valid => c.valid += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// One JSON object per line, UTF-8, fields in declaration order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self {
            entries,
            shuffle_seed: None,
        })
    }
}

/// A manifest entry with its images in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub hr: GrayImage,
    pub lr: GrayImage,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
}

/// Batch geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub batch_size: usize,
    pub hr_crop: usize,
    pub scale: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 16,
            hr_crop: 192,
            scale: 4,
        }
    }
}

impl PatchSpec {
    pub fn lr_crop(&self) -> usize {
        self.hr_crop / self.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub entry_id: String,
    pub lr_x: usize,
    pub lr_y: usize,
    pub hr_x: usize,
    pub hr_y: usize,
}

#[derive(Clone, Debug)]
pub struct PatchBatch {
    /// `[B, hr_crop / scale, hr_crop / scale, 1]`
    pub lr: Tensor<f32>,
    /// `[B, hr_crop, hr_crop, 1]`
    pub hr: Tensor<f32>,
    pub provenance: Vec<PatchOrigin>,
    /// Augmentation strengths per patch; empty when augmentation is off.
    pub augment: Vec<AugmentDraw>,
}

/// `p` itself when absolute, else `base/p`.
pub fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            let sc = s.entry.scale;
            if sc == 0 || s.lr.width() * sc != s.hr.width() || s.lr.height() * sc != s.hr.height() {
                return Err(Error::Data(format!(
                    "entry `{}`: LR {}x{} is not HR {}x{} divided by {sc}",
                    s.entry.id,
                    s.lr.width(),
                    s.lr.height(),
                    s.hr.width(),
                    s.hr.height()
                )));
            }
        }
        Ok(Self { samples })
    }

    /// Loads every image of `manifest`; relative paths resolve against `base_dir`.
    pub fn load(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        let samples = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(Sample {
                    entry: e.clone(),
                    hr: load_image(&resolve_path(base_dir, &e.hr_path))?,
                    lr: load_image(&resolve_path(base_dir, &e.lr_path))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.entry.split == split).collect()
    }

    /// Random scale-aligned crops from `split`, optionally augmenting the LR side.
    pub fn sample_patch_batch<R: Rng + ?Sized>(
        &self,
        split: Split,
        spec: &PatchSpec,
        augment: Option<&AugmentSpec>,
        rng: &mut R,
    ) -> Result<PatchBatch> {
        if spec.scale == 0 || spec.hr_crop % spec.scale != 0 || spec.hr_crop == 0 {
            return Err(Error::Config(format!(
                "crop {} is not divisible by scale {}",
                spec.hr_crop, spec.scale
            )));
        }
        let pool = self.split(split);
        if pool.is_empty() {
            return Err(Error::Data(format!("split `{split}` is empty")));
        }
        if let Some(s) = pool.iter().find(|s| s.entry.scale != spec.scale) {
            return Err(Error::Data(format!(
                "entry `{}` has scale {}, batch expects {}",
                s.entry.id, s.entry.scale, spec.scale
            )));
        }
        if let Some(s) = pool
            .iter()
            .find(|s| s.hr.width() < spec.hr_crop || s.hr.height() < spec.hr_crop)
        {
            return Err(Error::Data(format!(
                "entry `{}` ({}x{}) is smaller than the {} crop",
                s.entry.id,
                s.hr.width(),
                s.hr.height(),
                spec.hr_crop
            )));
        }
        let lc = spec.lr_crop();
        let mut lr_items = Vec::with_capacity(spec.batch_size);
        let mut hr_items = Vec::with_capacity(spec.batch_size);
        let mut provenance = Vec::with_capacity(spec.batch_size);
        let mut draws = Vec::new();
        for _ in 0..spec.batch_size {
            let s = pool[rng.random_range(0..pool.len())];
            let lr_x = rng.random_range(0..=s.lr.width() - lc);
            let lr_y = rng.random_range(0..=s.lr.height() - lc);
            let (hr_x, hr_y) = (lr_x * spec.scale, lr_y * spec.scale);
            let mut lr = s.lr.crop(lr_x, lr_y, lc, lc)?;
            if let Some(a) = augment.filter(|a| a.enabled) {
                let d = a.draw(rng);
                lr = augment::apply(&lr, d, rng);
                draws.push(d);
            }
            lr_items.push(lr.to_tensor());
            hr_items.push(s.hr.crop(hr_x, hr_y, spec.hr_crop, spec.hr_crop)?.to_tensor());
            provenance.push(PatchOrigin {
                entry_id: s.entry.id.clone(),
                lr_x,
                lr_y,
                hr_x,
                hr_y,
            });
        }
        Ok(PatchBatch {
            lr: Tensor::stack_batch(&lr_items)?,
            hr: Tensor::stack_batch(&hr_items)?,
            provenance,
            augment: draws,
        })
    }
}
