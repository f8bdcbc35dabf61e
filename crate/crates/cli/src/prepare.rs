use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use rocksr::imaging::dataset::{split_dataset, PairRecord, RockClass};
use rocksr::imaging::resample::{downsample, pick_random_kernel, ResampleKernel};
use rocksr::imaging::{load_image, save_image};
use rocksr::rng::{key_of, stream};
use rocksr::{Error, Result};
use serde::Serialize;

use crate::echo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Bicubic for every image.
    Bicubic,
    /// One of box, triangle, lanczos2, lanczos3 per image.
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Directory of single-channel `.png` / `.pgm` HR images.
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = crate::parse_scale)]
    pub scale: usize,
    #[arg(long, value_enum, default_value_t = KernelMode::Bicubic)]
    pub kernel_mode: KernelMode,
    /// Seeds kernel choice and the split shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Class for files without a `sandstone_` / `carbonate_` / `coal_` prefix.
    #[arg(long)]
    pub class: Option<RockClass>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "pgm" | "pnm")
    )
}

fn list_inputs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut inputs = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(prev) = inputs.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "`{}` and `{}` share the id `{stem}`",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(inputs)
}

fn prepare_one(args: &PrepareArgs, id: &str, path: &Path) -> Result<PairRecord> {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    let rock_class = RockClass::from_filename(&name)
        .or(args.class)
        .ok_or_else(|| Error::Data(format!("`{name}` has no class prefix and no --class was given")))?;
    let mut hr = load_image(path)?;
    if hr.width() % args.scale != 0 || hr.height() % args.scale != 0 {
        let cropped = hr.center_crop_to_multiple(args.scale)?;
        log::info!(
            "{name}: center-cropped {}x{} to {}x{}",
            hr.width(),
            hr.height(),
            cropped.width(),
            cropped.height()
        );
        hr = cropped;
    }
    let kernel = match args.kernel_mode {
        KernelMode::Bicubic => ResampleKernel::Bicubic,
        KernelMode::Random => pick_random_kernel(&mut stream(args.seed, &[key_of("kernel"), key_of(id)])),
    };
    let lr = downsample(&hr, args.scale, kernel)?;
    let hr_path = format!("hr/{id}.png");
    let lr_path = format!("lr/{id}.png");
    save_image(&hr, &args.out.join(&hr_path), hr.source_bit_depth)?;
    save_image(&lr, &args.out.join(&lr_path), hr.source_bit_depth)?;
    Ok(PairRecord {
        id: id.to_string(),
        hr_path,
        lr_path,
        rock_class,
        kernel_used: kernel,
        scale: args.scale,
    })
}

pub fn run(args: PrepareArgs) -> anyhow::Result<()> {
    echo::write(&args.out.join("config.json"), "prepare", &args)?;
    let inputs = list_inputs(&args.hr_dir)?;
    if inputs.is_empty() {
        return Err(Error::Data(format!("no .png or .pgm images in {}", args.hr_dir.display())).into());
    }
    let results: Vec<(String, Result<PairRecord>)> = inputs
        .par_iter()
        .map(|(id, path)| (id.clone(), prepare_one(&args, id, path)))
        .collect();
    let mut pairs = Vec::with_capacity(results.len());
    for (id, r) in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(e) => log::error!("skipping `{id}`: {e}"),
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data("every input image failed".into()).into());
    }
    let manifest = split_dataset(pairs, args.seed)?;
    let path = args.out.join("manifest.jsonl");
    manifest.write_jsonl(&path)?;
    let c = manifest.counts();
    log::info!(
        "wrote {} ({} train, {} valid, {} test)",
        path.display(),
        c.train,
        c.valid,
        c.test
    );
    Ok(())
}
