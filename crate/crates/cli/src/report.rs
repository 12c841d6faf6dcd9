//! Structured run reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use stereo_costvol::pipeline::{PipelineConfig, PipelineOutput, RegularizerKind, StageTimings};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub features_ms: f64,
    pub construction_ms: f64,
    pub aggregation_ms: f64,
    pub prediction_ms: f64,
}

impl From<StageTimings> for Timings {
    fn from(t: StageTimings) -> Self {
        Self {
            features_ms: t.features_ms,
            construction_ms: t.construction_ms,
            aggregation_ms: t.aggregation_ms,
            prediction_ms: t.prediction_ms,
        }
    }
}

impl Timings {
    /// Volume construction plus aggregation.
    pub fn volume_ms(&self) -> f64 {
        self.construction_ms + self.aggregation_ms
    }
}

/// The effective configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub mode: String,
    pub dmax: usize,
    pub k: Option<usize>,
    pub alpha: f32,
    pub beta: f32,
    pub radius: usize,
    pub regularizer: String,
    pub box_radius: usize,
    pub logit_scale: f32,
    pub backend: String,
    pub threads: Option<usize>,
}

impl ConfigEcho {
    pub fn new(cfg: &PipelineConfig, threads: Option<usize>) -> Self {
        let box_radius = match cfg.regularizer {
            RegularizerKind::Box3d { radius } => radius,
            RegularizerKind::Identity => 0,
        };
        Self {
            mode: cfg.mode.name().to_string(),
            dmax: cfg.d_max,
            k: match cfg.mode {
                stereo_costvol::PipelineMode::FastAcv => Some(cfg.effective_k()),
                stereo_costvol::PipelineMode::Acv => None,
            },
            alpha: cfg.vap.alpha,
            beta: cfg.vap.beta,
            radius: cfg.vap.radius,
            regularizer: cfg.regularizer.name().to_string(),
            box_radius,
            logit_scale: cfg.logit_scale,
            backend: format!("{:?}", cfg.feature_backend).to_lowercase(),
            threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub width: usize,
    pub height: usize,
    pub timings: Timings,
    pub peak_volume_elements: usize,
    pub volume_elements: BTreeMap<String, usize>,
    pub config: ConfigEcho,
    pub output: Option<String>,
}

impl RunReport {
    pub fn new(out: &PipelineOutput, cfg: &PipelineConfig, threads: Option<usize>, output: Option<String>) -> Self {
        Self {
            width: out.disparity.width(),
            height: out.disparity.height(),
            timings: out.timings.into(),
            peak_volume_elements: out.accounting.peak(),
            volume_elements: out.accounting.sizes().clone(),
            config: ConfigEcho::new(cfg, threads),
            output,
        }
    }

    pub fn write_text(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(w, "mode: {}", c.mode)?;
        writeln!(w, "size: {}x{}", self.width, self.height)?;
        writeln!(w, "dmax: {}", c.dmax)?;
        if let Some(k) = c.k {
            writeln!(w, "k: {k}")?;
        }
        writeln!(w, "regularizer: {} (box radius {})", c.regularizer, c.box_radius)?;
        writeln!(w, "vap: alpha {} beta {} radius {}", c.alpha, c.beta, c.radius)?;
        writeln!(w, "logit scale: {}", c.logit_scale)?;
        writeln!(w, "backend: {}", c.backend)?;
        match c.threads {
            Some(n) => writeln!(w, "threads: {n}")?,
            None => writeln!(w, "threads: default")?,
        }
        let t = &self.timings;
        writeln!(w, "time features_ms: {:.3}", t.features_ms)?;
        writeln!(w, "time construction_ms: {:.3}", t.construction_ms)?;
        writeln!(w, "time aggregation_ms: {:.3}", t.aggregation_ms)?;
        writeln!(w, "time prediction_ms: {:.3}", t.prediction_ms)?;
        writeln!(w, "peak volume elements: {}", self.peak_volume_elements)?;
        for (name, n) in &self.volume_elements {
            writeln!(w, "volume {name}: {n}")?;
        }
        if let Some(o) = &self.output {
            writeln!(w, "output: {o}")?;
        }
        Ok(())
    }
}
