//! `gen-stereogram`: random-dot pair with ground truth.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use stereo_costvol::io::{generate_stereogram, save_gray, write_kitti_disp_png, write_pfm, StereogramSpec};

use crate::EXIT_OK;

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Constant disparity in pixels.
    #[arg(long, default_value_t = 8)]
    pub disparity: u32,
    /// Fraction of pixels carrying a random dot.
    #[arg(long, default_value_t = 1.0)]
    pub density: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image format for the views: png | pgm
    #[arg(long, default_value = "png")]
    pub ext: String,
}

pub fn cmd_generate(a: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    if a.ext != "png" && a.ext != "pgm" {
        bail!("unknown image extension '{}' (png|pgm)", a.ext);
    }
    let spec = StereogramSpec { dot_density: a.density, ..StereogramSpec::constant(a.height, a.width, a.disparity, a.seed) };
    let s = generate_stereogram(&spec)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let left = a.out_dir.join(format!("left.{}", a.ext));
    let right = a.out_dir.join(format!("right.{}", a.ext));
    save_gray(&s.left, &left)?;
    save_gray(&s.right, &right)?;
    let gt_pfm = a.out_dir.join("gt.pfm");
    let gt_png = a.out_dir.join("gt.png");
    let mut masked = s.gt.data().to_vec();
    for (v, ok) in masked.iter_mut().zip(&s.mask.valid) {
        if !ok {
            *v = f32::INFINITY;
        }
    }
    let pfm_map = stereo_costvol::DisparityMap::new(s.gt.height(), s.gt.width(), masked)?;
    std::fs::write(&gt_pfm, write_pfm(&pfm_map))?;
    std::fs::write(&gt_png, write_kitti_disp_png(&s.gt, &s.mask)?)?;
    for p in [&left, &right, &gt_pfm, &gt_png] {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(EXIT_OK)
}
