//! `eval`: metric table for a predicted disparity map.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use stereo_costvol::io::{load_gray, read_kitti_disp_png, read_pfm};
use stereo_costvol::metrics::{bad_x, d1, epe, EvalMask};
use stereo_costvol::volume::DisparityMap;

use crate::{display, path_ext, EXIT_OK};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Predicted disparity (.pfm or KITTI .png).
    pub pred: PathBuf,
    /// Ground truth (.pfm, non-finite = invalid; or KITTI .png, 0 = invalid).
    pub gt: PathBuf,
    /// 8-bit image; nonzero pixels are evaluated.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub epe: f64,
    pub d1: f64,
    pub bad_1: f64,
    pub bad_2: f64,
    pub bad_3: f64,
    pub valid_pixels: usize,
}

/// Reads a disparity file with its validity mask.
pub fn read_disparity(path: &Path) -> Result<(DisparityMap, EvalMask)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    match path_ext(path).as_str() {
        "pfm" => {
            let map = read_pfm(&bytes).with_context(|| format!("{}", path.display()))?;
            let valid = map.data().iter().map(|v| v.is_finite()).collect();
            let mask = EvalMask::new(map.height(), map.width(), valid)?;
            Ok((map, mask))
        }
        "png" => Ok(read_kitti_disp_png(&bytes).with_context(|| format!("{}", path.display()))?),
        other => bail!("{}: unsupported disparity format '.{other}' (pfm|png)", path.display()),
    }
}

pub fn evaluate(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Result<MetricsReport> {
    Ok(MetricsReport {
        epe: epe(pred, gt, mask)?,
        d1: d1(pred, gt, mask)?,
        bad_1: bad_x(pred, gt, mask, 1.0)?,
        bad_2: bad_x(pred, gt, mask, 2.0)?,
        bad_3: bad_x(pred, gt, mask, 3.0)?,
        valid_pixels: mask.count(),
    })
}

pub fn write_table(m: &MetricsReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "EPE: {:.2}", m.epe)?;
    writeln!(out, "D1: {:.2}", m.d1)?;
    writeln!(out, "bad-1: {:.2}", m.bad_1)?;
    writeln!(out, "bad-2: {:.2}", m.bad_2)?;
    writeln!(out, "bad-3: {:.2}", m.bad_3)?;
    writeln!(out, "valid pixels: {}", m.valid_pixels)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let (pred, _) = read_disparity(&a.pred)?;
    let (gt, mut mask) = read_disparity(&a.gt)?;
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        bail!(
            "shape mismatch: prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        );
    }
    if let Some(p) = &a.mask {
        let img = load_gray(p).with_context(|| format!("cannot read {}", display(p)))?;
        let extra = EvalMask::new(img.height(), img.width(), img.data().iter().map(|v| *v > 0.0).collect())?;
        mask = mask.and(&extra).with_context(|| format!("mask {}", display(p)))?;
    }
    if let Some(i) = (0..pred.data().len()).find(|&i| mask.valid[i] && !pred.data()[i].is_finite()) {
        bail!("prediction is not finite at pixel ({}, {})", i / pred.width(), i % pred.width());
    }
    let m = evaluate(&pred, &gt, &mask)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&m)?)?;
    } else {
        write_table(&m, out)?;
    }
    Ok(EXIT_OK)
}
