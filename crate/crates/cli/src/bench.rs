//! `bench`: per-stage timings over a sweep, with volume element counts
//! checked against their closed forms.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use stereo_costvol::io::{generate_stereogram, Stereogram, StereogramSpec};
use stereo_costvol::par::with_threads;
use stereo_costvol::pipeline::{run_pipeline, PipelineConfig, PipelineMode, FAST_GROUPS};

use crate::report::Timings;
use crate::{resolve_threads, EXIT_FAILURE, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Size {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("size '{s}' is not WxH"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("size '{s}' is not WxH"));
        Ok(Size { width: parse(w)?, height: parse(h)? })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "acv,fast_acv")]
    pub modes: Vec<PipelineMode>,
    #[arg(long, value_delimiter = ',', default_value = "192")]
    pub dmax: Vec<usize>,
    /// Fast-ACV hypothesis counts.
    #[arg(long, value_delimiter = ',', default_value = "24")]
    pub k: Vec<usize>,
    /// Resolutions as WxH.
    #[arg(long, value_delimiter = ',', default_value = "960x512")]
    pub size: Vec<Size>,
    /// Timed runs per configuration; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub mode: String,
    pub size: Size,
    pub dmax: usize,
    pub k: Option<usize>,
    pub runs: usize,
    pub median: Timings,
    /// Median of construction plus aggregation.
    pub volume_ms: f64,
    pub peak_volume_elements: usize,
    pub volume_elements: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountCheck {
    pub mode: String,
    pub size: Size,
    pub dmax: usize,
    pub k: Option<usize>,
    pub volume: String,
    pub analytic: usize,
    pub measured: usize,
}

impl CountCheck {
    pub fn ok(&self) -> bool {
        self.analytic == self.measured
    }
}

/// Fast/ACV ratio of one volume, from the closed forms and from the counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub name: String,
    pub size: Size,
    pub dmax: usize,
    pub k: usize,
    pub analytic: f64,
    pub measured: f64,
    pub time_ratio: f64,
}

impl RatioRow {
    pub fn bitwise_equal(&self) -> bool {
        self.analytic.to_bits() == self.measured.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub threads: Option<usize>,
    pub rows: Vec<BenchRow>,
    pub counts: Vec<CountCheck>,
    pub ratios: Vec<RatioRow>,
}

impl BenchReport {
    pub fn all_counts_match(&self) -> bool {
        self.counts.iter().all(CountCheck::ok) && self.ratios.iter().all(RatioRow::bitwise_equal)
    }

    pub fn row(&self, mode: PipelineMode, size: Size, dmax: usize, k: Option<usize>) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode.name() && r.size == size && r.dmax == dmax && r.k == k)
    }
}

/// Closed-form element counts of the volumes each mode builds.
pub fn analytic_counts(cfg: &PipelineConfig, size: Size) -> Vec<(&'static str, usize)> {
    let (q, e) = ((size.height / 4) * (size.width / 4), (size.height / 8) * (size.width / 8));
    let nc = cfg.acv.concat_channels;
    match cfg.mode {
        PipelineMode::Acv => {
            let dq = cfg.d_max / 4;
            vec![("c_patch", cfg.acv.n_groups * dq * q), ("concat", 2 * nc * dq * q)]
        }
        PipelineMode::FastAcv => {
            vec![("corr_low", FAST_GROUPS * (cfg.d_max / 8) * e), ("compact", 2 * nc * cfg.effective_k() * q)]
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench_one(s: &Stereogram, cfg: &PipelineConfig, size: Size, runs: usize, warmup: usize) -> Result<BenchRow> {
    for _ in 0..warmup {
        run_pipeline(&s.left, &s.right, cfg)?;
    }
    let mut timings = Vec::with_capacity(runs);
    let mut counts: Option<(usize, BTreeMap<String, usize>)> = None;
    for _ in 0..runs {
        let out = run_pipeline(&s.left, &s.right, cfg)?;
        let these = (out.accounting.peak(), out.accounting.sizes().clone());
        match &counts {
            Some(c) if *c != these => bail!("volume counts changed between runs of {}", cfg.mode.name()),
            _ => counts = Some(these),
        }
        timings.push(Timings::from(out.timings));
    }
    let (peak, sizes) = counts.expect("runs >= 1");
    let pick = |f: fn(&Timings) -> f64| median(timings.iter().map(f).collect());
    Ok(BenchRow {
        mode: cfg.mode.name().to_string(),
        size,
        dmax: cfg.d_max,
        k: matches!(cfg.mode, PipelineMode::FastAcv).then(|| cfg.effective_k()),
        runs,
        median: Timings {
            features_ms: pick(|t| t.features_ms),
            construction_ms: pick(|t| t.construction_ms),
            aggregation_ms: pick(|t| t.aggregation_ms),
            prediction_ms: pick(|t| t.prediction_ms),
        },
        volume_ms: pick(Timings::volume_ms),
        peak_volume_elements: peak,
        volume_elements: sizes,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    a as f64 / b as f64
}

/// Runs the sweep. Configurations the pipeline rejects are usage errors.
pub fn run_bench(a: &BenchArgs, threads: Option<usize>) -> Result<BenchReport> {
    if a.runs == 0 {
        bail!("--runs must be >= 1");
    }
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    let mut ratios = Vec::new();
    for &size in &a.size {
        let disparity = 8.min((size.width.saturating_sub(1) / 4) as u32);
        let spec = StereogramSpec::constant(size.height, size.width, disparity, a.seed);
        let s = generate_stereogram(&spec).with_context(|| format!("stereogram {}x{}", size.width, size.height))?;
        for &dmax in &a.dmax {
            let mut cfgs = Vec::new();
            for &mode in &a.modes {
                match mode {
                    PipelineMode::Acv => cfgs.push(PipelineConfig::new(mode, dmax)),
                    PipelineMode::FastAcv => {
                        cfgs.extend(a.k.iter().map(|&k| PipelineConfig { k: Some(k), ..PipelineConfig::new(mode, dmax) }))
                    }
                }
            }
            for cfg in &cfgs {
                cfg.validate()?;
                let row = with_threads(threads, || bench_one(&s, cfg, size, a.runs, a.warmup))?;
                for (name, analytic) in analytic_counts(cfg, size) {
                    counts.push(CountCheck {
                        mode: row.mode.clone(),
                        size,
                        dmax,
                        k: row.k,
                        volume: name.to_string(),
                        analytic,
                        measured: row.volume_elements.get(name).copied().unwrap_or(0),
                    });
                }
                rows.push(row);
            }
            let Some(acv_cfg) = cfgs.iter().find(|c| c.mode == PipelineMode::Acv) else { continue };
            let acv_counts = analytic_counts(acv_cfg, size);
            let acv_row = rows.iter().rev().find(|r| r.mode == "acv" && r.size == size && r.dmax == dmax).cloned();
            let acv_row = acv_row.expect("acv row was just pushed");
            for cfg in cfgs.iter().filter(|c| c.mode == PipelineMode::FastAcv) {
                let k = cfg.effective_k();
                let fast_counts = analytic_counts(cfg, size);
                let fast_row = rows.iter().rev().find(|r| r.k == Some(k) && r.size == size && r.dmax == dmax);
                let fast_row = fast_row.expect("fast row was just pushed");
                for ((fast_name, fast_n), (acv_name, acv_n)) in fast_counts.iter().zip(&acv_counts) {
                    let measured = |r: &BenchRow, n: &str| r.volume_elements.get(n).copied().unwrap_or(0);
                    ratios.push(RatioRow {
                        name: format!("{fast_name}/{acv_name}"),
                        size,
                        dmax,
                        k,
                        analytic: ratio(*fast_n, *acv_n),
                        measured: ratio(measured(fast_row, fast_name), measured(&acv_row, acv_name)),
                        time_ratio: fast_row.volume_ms / acv_row.volume_ms,
                    });
                }
            }
        }
    }
    Ok(BenchReport { threads, rows, counts, ratios })
}

pub fn write_text(r: &BenchReport, out: &mut dyn Write) -> std::io::Result<()> {
    match r.threads {
        Some(n) => writeln!(out, "threads: {n}")?,
        None => writeln!(out, "threads: default")?,
    }
    writeln!(
        out,
        "{:<9} {:>9} {:>5} {:>4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>14}",
        "mode", "size", "dmax", "k", "features_ms", "construct_ms", "aggregate_ms", "predict_ms", "volume_ms", "peak_elems"
    )?;
    for row in &r.rows {
        let t = &row.median;
        writeln!(
            out,
            "{:<9} {:>9} {:>5} {:>4} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>14}",
            row.mode,
            format!("{}x{}", row.size.width, row.size.height),
            row.dmax,
            row.k.map_or("-".to_string(), |k| k.to_string()),
            t.features_ms,
            t.construction_ms,
            t.aggregation_ms,
            t.prediction_ms,
            row.volume_ms,
            row.peak_volume_elements
        )?;
    }
    for c in &r.counts {
        writeln!(
            out,
            "count {} {}x{} dmax {} k {} {}: analytic {} measured {} {}",
            c.mode,
            c.size.width,
            c.size.height,
            c.dmax,
            c.k.map_or("-".to_string(), |k| k.to_string()),
            c.volume,
            c.analytic,
            c.measured,
            if c.ok() { "ok" } else { "MISMATCH" }
        )?;
    }
    for q in &r.ratios {
        writeln!(
            out,
            "ratio fast/acv {} {}x{} dmax {} k {}: analytic {} measured {} {} (volume time ratio {:.3})",
            q.name,
            q.size.width,
            q.size.height,
            q.dmax,
            q.k,
            q.analytic,
            q.measured,
            if q.bitwise_equal() { "bitwise-equal" } else { "MISMATCH" },
            q.time_ratio
        )?;
    }
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs, threads: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let threads = resolve_threads(threads, None)?;
    let report = run_bench(a, threads)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write_text(&report, out)?;
    }
    Ok(if report.all_counts_match() { EXIT_OK } else { EXIT_FAILURE })
}
