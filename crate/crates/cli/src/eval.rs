use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use rocksr::imaging::dataset::{resolve_path, DatasetManifest, RockClass, Sample, Split};
use rocksr::imaging::load_image;
use rocksr::models::{Checkpoint, Generator};
use rocksr::train::{validate, ImageScore, Summary};
use rocksr::{Error, Result};
use serde::Serialize;

use crate::echo;

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Generator evaluated as method `sr`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second generator, evaluated as method `srgan`.
    #[arg(long)]
    pub gan_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// One row per rock class instead of a single `all` row.
    #[arg(long)]
    pub group_by_class: bool,
    /// Directory for `stats.csv` and `per_image.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct StatRow<'a> {
    class: &'a str,
    method: &'a str,
    mean: f64,
    var: f64,
}

#[derive(Serialize)]
struct ImageRow<'a> {
    id: &'a str,
    class: RockClass,
    method: &'a str,
    psnr: f64,
}

fn load_pairs(manifest: &DatasetManifest, base: &Path, split: Split) -> Vec<Sample> {
    let entries: Vec<_> = manifest.in_split(split).collect();
    let loaded: Vec<Option<Sample>> = entries
        .par_iter()
        .map(|e| {
            let pair = load_image(&resolve_path(base, &e.hr_path))
                .and_then(|hr| Ok((hr, load_image(&resolve_path(base, &e.lr_path))?)));
            match pair {
                Ok((hr, lr)) => Some(Sample {
                    entry: (*e).clone(),
                    hr,
                    lr,
                }),
                Err(err) => {
                    log::warn!("skipping `{}`: {err}", e.id);
                    None
                }
            }
        })
        .collect();
    loaded.into_iter().flatten().collect()
}

fn score(generator: &Generator, samples: &[Sample]) -> Result<Vec<ImageScore>> {
    let per: Vec<Vec<ImageScore>> = samples
        .par_iter()
        .map(|s| validate(generator, &[s]).map(|r| r.per_image))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    echo::write(&args.out.join("config.json"), "eval", &args)?;
    let manifest = DatasetManifest::read_jsonl(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let samples = load_pairs(&manifest, base, args.split);
    if samples.is_empty() {
        return Err(Error::Data(format!("split `{}` has no readable pairs", args.split)).into());
    }

    let sr_gen = Generator::from_checkpoint(&Checkpoint::load(&args.checkpoint)?, None)?;
    let sr = score(&sr_gen, &samples)?;
    let gan = match &args.gan_checkpoint {
        Some(p) => Some(score(&Generator::from_checkpoint(&Checkpoint::load(p)?, None)?, &samples)?),
        None => None,
    };

    // (method, per-image PSNR) in table order
    let mut methods: Vec<(&str, Vec<(&ImageScore, f64)>)> = vec![
        ("bicubic", sr.iter().map(|s| (s, s.bicubic_psnr)).collect()),
        ("sr", sr.iter().map(|s| (s, s.sr_psnr)).collect()),
    ];
    if let Some(g) = &gan {
        methods.push(("srgan", g.iter().map(|s| (s, s.sr_psnr)).collect()));
    }

    let groups: Vec<(String, Option<RockClass>)> = if args.group_by_class {
        RockClass::ALL.iter().map(|c| (c.to_string(), Some(*c))).collect()
    } else {
        vec![("all".to_string(), None)]
    };
    std::fs::create_dir_all(&args.out).map_err(Error::from)?;
    let mut stats = csv::Writer::from_path(args.out.join("stats.csv")).map_err(Error::from)?;
    let mut rows = 0;
    for (name, class) in &groups {
        let mut any = false;
        for (method, scores) in &methods {
            let values: Vec<f64> = scores
                .iter()
                .filter(|(s, _)| class.is_none_or(|c| s.rock_class == c))
                .map(|(_, v)| *v)
                .collect();
            if values.is_empty() {
                continue;
            }
            any = true;
            let Summary { mean, variance } = Summary::of(&values);
            stats
                .serialize(StatRow {
                    class: name,
                    method,
                    mean,
                    var: variance,
                })
                .map_err(Error::from)?;
            println!("{name:<10} {method:<8} mean {mean:>8.4} var {variance:>8.4} (n={})", values.len());
            rows += 1;
        }
        if !any {
            log::warn!("no images of class `{name}` in split `{}`; row omitted", args.split);
        }
    }
    stats.flush().map_err(Error::from)?;

    let mut per_image = csv::Writer::from_path(args.out.join("per_image.csv")).map_err(Error::from)?;
    for (method, scores) in &methods {
        for (s, v) in scores {
            per_image
                .serialize(ImageRow {
                    id: &s.id,
                    class: s.rock_class,
                    method,
                    psnr: *v,
                })
                .map_err(Error::from)?;
        }
    }
    per_image.flush().map_err(Error::from)?;
    log::info!("evaluated {} images; {} table rows", samples.len(), rows);
    Ok(())
}
