use std::path::PathBuf;

use clap::Args;
use rocksr::imaging::diffmap::difference_map;
use rocksr::imaging::{load_image, save_image, BitDepth};
use serde::Serialize;

use crate::echo;

#[derive(Debug, Args, Serialize)]
pub struct DiffmapArgs {
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    /// 8-bit map to write (`.png` or `.pgm`).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: DiffmapArgs) -> anyhow::Result<()> {
    let mut echo_path = args.out.clone().into_os_string();
    echo_path.push(".config.json");
    echo::write(&PathBuf::from(echo_path), "diffmap", &args)?;

    let a = load_image(&args.image_a)?;
    let b = load_image(&args.image_b)?;
    let map = difference_map(&a, &b)?;
    save_image(&map.to_image(), &args.out, BitDepth::Eight)?;
    println!("mean_abs_diff {}", map.mean());
    println!("scale {}", map.scale);
    Ok(())
}
