//! `match`: run a pipeline on an image pair and write the disparity map.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use stereo_costvol::io::{load_gray, write_kitti_disp_png, write_pfm};
use stereo_costvol::metrics::EvalMask;
use stereo_costvol::par::with_threads;
use stereo_costvol::pipeline::{run_pipeline, FeatureBackend, PipelineConfig, PipelineMode, RegularizerKind};

use crate::config::ConfigFile;
use crate::report::RunReport;
use crate::{display, resolve_threads, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Pfm,
    Kitti,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pfm" => Ok(Self::Pfm),
            "kitti" => Ok(Self::Kitti),
            _ => Err(format!("unknown format '{s}' (pfm|kitti)")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    pub left: PathBuf,
    pub right: PathBuf,
    /// Output path (default disparity.pfm or disparity.png).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// key=value file with defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// acv | fast_acv
    #[arg(long)]
    pub mode: Option<PipelineMode>,
    /// Full-resolution disparity range D.
    #[arg(long)]
    pub dmax: Option<usize>,
    /// Fast-ACV hypothesis count (default min(24, D/4)).
    #[arg(long)]
    pub k: Option<usize>,
    /// VAP confidence offset.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f32>,
    /// VAP confidence slope.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f32>,
    /// VAP cross sampling radius.
    #[arg(long)]
    pub radius: Option<usize>,
    /// identity | box3d
    #[arg(long)]
    pub regularizer: Option<String>,
    #[arg(long)]
    pub box_radius: Option<usize>,
    /// Gain applied after each regularization.
    #[arg(long)]
    pub logit_scale: Option<f32>,
    /// census | gradient
    #[arg(long)]
    pub backend: Option<FeatureBackend>,
    /// pfm | kitti
    #[arg(long)]
    pub format: Option<OutputFormat>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

const MATCH_KEYS: &[&str] = &[
    "mode",
    "dmax",
    "k",
    "alpha",
    "beta",
    "radius",
    "regularizer",
    "box-radius",
    "logit-scale",
    "backend",
    "format",
    "threads",
    "json",
];

/// Pipeline configuration from flags over config-file values over defaults.
pub fn resolve_config(a: &MatchArgs, file: &ConfigFile) -> Result<PipelineConfig> {
    let mode = file.pick(a.mode, "mode")?.unwrap_or_default();
    let dmax = file.pick(a.dmax, "dmax")?.unwrap_or(192);
    let mut cfg = PipelineConfig::new(mode, dmax);
    cfg.k = file.pick(a.k, "k")?;
    if let Some(v) = file.pick(a.alpha, "alpha")? {
        cfg.vap.alpha = v;
    }
    if let Some(v) = file.pick(a.beta, "beta")? {
        cfg.vap.beta = v;
    }
    if let Some(v) = file.pick(a.radius, "radius")? {
        cfg.vap.radius = v;
    }
    let box_radius = file.pick(a.box_radius, "box-radius")?.unwrap_or(1);
    if let Some(name) = file.pick(a.regularizer.clone(), "regularizer")? {
        cfg.regularizer = RegularizerKind::parse(&name, box_radius).map_err(anyhow::Error::msg)?;
    } else {
        cfg.regularizer = RegularizerKind::Box3d { radius: box_radius };
    }
    if let Some(v) = file.pick(a.logit_scale, "logit-scale")? {
        cfg.logit_scale = v;
    }
    if let Some(v) = file.pick(a.backend, "backend")? {
        cfg.feature_backend = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_match(a: &MatchArgs, threads_flag: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(MATCH_KEYS)?;
    let cfg = resolve_config(a, &file)?;
    let threads = resolve_threads(threads_flag, file.get("threads")?)?;
    let format = file.pick(a.format, "format")?.unwrap_or(OutputFormat::Pfm);
    let json = a.json || file.get::<bool>("json")?.unwrap_or(false);

    let left = load_gray(&a.left).with_context(|| format!("cannot read {}", display(&a.left)))?;
    let right = load_gray(&a.right).with_context(|| format!("cannot read {}", display(&a.right)))?;
    let result = with_threads(threads, || run_pipeline(&left, &right, &cfg))?;

    let path = a.output.clone().unwrap_or_else(|| match format {
        OutputFormat::Pfm => PathBuf::from("disparity.pfm"),
        OutputFormat::Kitti => PathBuf::from("disparity.png"),
    });
    let bytes = match format {
        OutputFormat::Pfm => write_pfm(&result.disparity),
        OutputFormat::Kitti => {
            let d = &result.disparity;
            write_kitti_disp_png(d, &EvalMask::all_valid(d.height(), d.width()))?
        }
    };
    std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", display(&path)))?;

    let report = RunReport::new(&result, &cfg, threads, Some(display(&path)));
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        report.write_text(out)?;
    }
    Ok(EXIT_OK)
}
