use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use rocksr::imaging::{load_image, save_image, GrayImage};
use rocksr::models::{Checkpoint, Generator};
use rocksr::train::super_resolve;
use rocksr::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::echo;

/// Tile overlap in input pixels.
pub const TILE_OVERLAP: usize = 16;

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Generator or training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; files keep their input names and bit depth.
    #[arg(long)]
    pub out: PathBuf,
    /// Process in square tiles of this many input pixels, blended over a 16 px overlap.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Upper bound on the estimated activation memory per forward pass.
    #[arg(long, default_value_t = 4096)]
    pub memory_budget_mb: usize,
    /// Images processed concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// Rough peak activation bytes of one forward pass producing `out_pixels`.
fn estimated_bytes(out_pixels: usize, filters: usize) -> usize {
    out_pixels * filters * 4 * 4
}

fn check_budget(generator: &Generator, w: usize, h: usize, budget_mb: usize, path: &Path) -> Result<()> {
    let s = generator.config().scale;
    let need = estimated_bytes(w * s * h * s, generator.config().n_filters);
    if need > budget_mb << 20 {
        return Err(Error::Data(format!(
            "{}: a {w}x{h} forward pass needs about {} MB, over --memory-budget-mb {budget_mb}; \
             raise the budget or pass --tile",
            path.display(),
            need >> 20
        )));
    }
    Ok(())
}

/// Tile origins along one axis covering `len` with tiles of `tile` and the fixed overlap.
fn tile_starts(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - TILE_OVERLAP;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Linear ramp over the overlap on sides that have a neighbour.
fn ramp(pos: usize, len: usize, ramp_len: usize, left: bool, right: bool) -> f32 {
    let mut w = 1.0f32;
    if left {
        w = w.min((pos as f32 + 0.5) / ramp_len as f32);
    }
    if right {
        w = w.min(((len - pos) as f32 - 0.5) / ramp_len as f32);
    }
    w
}

pub fn super_resolve_tiled(generator: &Generator, lr: &GrayImage, tile: usize) -> Result<GrayImage> {
    let s = generator.config().scale;
    let (w, h) = (lr.width(), lr.height());
    let (ow, oh) = (w * s, h * s);
    let mut acc = vec![0f32; ow * oh];
    let mut weight = vec![0f32; ow * oh];
    let xs = tile_starts(w, tile);
    let ys = tile_starts(h, tile);
    for &y0 in &ys {
        for &x0 in &xs {
            let (tw, th) = (tile.min(w), tile.min(h));
            let sr = super_resolve(generator, &lr.crop(x0, y0, tw, th)?)?;
            let (sw, sh) = (tw * s, th * s);
            let ramp_len = TILE_OVERLAP * s;
            for ty in 0..sh {
                let wy = ramp(ty, sh, ramp_len, y0 > 0, y0 + th < h);
                for tx in 0..sw {
                    let wx = ramp(tx, sw, ramp_len, x0 > 0, x0 + tw < w);
                    let o = (y0 * s + ty) * ow + x0 * s + tx;
                    acc[o] += wx * wy * sr.get(tx, ty);
                    weight[o] += wx * wy;
                }
            }
        }
    }
    let pixels = acc.iter().zip(&weight).map(|(a, w)| a / w).collect();
    let mut out = GrayImage::new(ow, oh, pixels, lr.source_bit_depth)?;
    out.resolution_um = lr.resolution_um.map(|r| r / s as f64);
    Ok(out)
}

fn infer_one(generator: &Generator, args: &InferArgs, path: &Path) -> Result<PathBuf> {
    let lr = load_image(path)?;
    let (w, h) = (lr.width(), lr.height());
    let sr = match args.tile {
        Some(t) => {
            check_budget(generator, t.min(w), t.min(h), args.memory_budget_mb, path)?;
            super_resolve_tiled(generator, &lr, t)?
        }
        None => {
            check_budget(generator, w, h, args.memory_budget_mb, path)?;
            super_resolve(generator, &lr)?
        }
    };
    let s = generator.config().scale;
    if (sr.width(), sr.height()) != (w * s, h * s) {
        return Err(Error::Shape(format!(
            "{}: output {}x{} is not {s}x the input {w}x{h}",
            path.display(),
            sr.width(),
            sr.height()
        )));
    }
    let dest = args.out.join(path.file_name().unwrap_or_default());
    save_image(&sr, &dest, lr.source_bit_depth)?;
    log::info!("{} -> {} ({}x{})", path.display(), dest.display(), sr.width(), sr.height());
    Ok(dest)
}

pub fn run(args: InferArgs) -> anyhow::Result<()> {
    if let Some(t) = args.tile {
        if t <= 2 * TILE_OVERLAP {
            return Err(Error::Config(format!("--tile must exceed {}", 2 * TILE_OVERLAP)).into());
        }
    }
    let generator = Generator::from_checkpoint(&Checkpoint::load(&args.checkpoint)?, None)?;
    echo::write(
        &args.out.join("config.json"),
        "infer",
        &json!({ "args": &args, "generator": generator.config(), "tile_overlap": TILE_OVERLAP }),
    )?;
    match args.parallel {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| {
                args.inputs
                    .par_iter()
                    .map(|p| infer_one(&generator, &args, p))
                    .collect::<Result<Vec<_>>>()
            })?;
        }
        _ => {
            for p in &args.inputs {
                infer_one(&generator, &args, p)?;
            }
        }
    }
    Ok(())
}
