//! End-to-end non-learned stereo matchers built from the ACV and Fast-ACV
//! volume operations.
//!
//! Census (or gradient) features replace the learned backbone, and a fixed
//! regularizer followed by a logit gain replaces the learned aggregation
//! networks. Everything else follows the ACV and Fast-ACV dataflow.

mod compress;
mod features;
mod regularize;

use std::time::Instant;

pub use compress::concat_projection;
pub use features::{
    box_downsample, build_feature_pyramid, census_features, fit_channels, gradient_features, unit_mean,
    upsample_features, FeatureBackend, FeaturePyramid, PYRAMID_WINDOWS,
};
pub use regularize::{box2d_regularize, box3d_regularize, pipeline_regularizer, Box3d, RegularizerKind, SpatialOnly};

use crate::accounting::VolumeAccounting;
use crate::acv::{
    attention_filter, build_mapm_volume, generate_attention_weights, AcvConfig, MapmLevel, PatchWeights,
    VolumeRegularizer,
};
use crate::error::{invalid, shape_err, Result};
use crate::fast_acv::{
    build_compact_concat, f2i_topk, fast_attention_filter, predict_from_hypotheses, volume_attention_propagation,
    VapConfig,
};
use crate::io::GrayImage;
use crate::volume::{
    build_concat_volume, channel_mean, group_correlation, soft_argmin, softmax_over_disparity, DisparityMap,
    FeatureMap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipelineMode {
    #[default]
    Acv,
    FastAcv,
}

impl std::str::FromStr for PipelineMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "acv" => Ok(Self::Acv),
            "fast_acv" => Ok(Self::FastAcv),
            _ => Err(format!("unknown mode '{s}' (acv|fast_acv)")),
        }
    }
}

impl PipelineMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Acv => "acv",
            Self::FastAcv => "fast_acv",
        }
    }
}

/// Correlation groups of the 1/8-resolution Fast-ACV volume.
pub const FAST_GROUPS: usize = 12;
/// Default number of F2I hypotheses.
pub const DEFAULT_K: usize = 24;
/// Hypotheses combined by the final Fast-ACV prediction.
pub const FAST_TOP: usize = 2;
/// Default gain applied after every regularization step.
pub const DEFAULT_LOGIT_SCALE: f32 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    /// Full-resolution disparity range `D`; must equal `acv.d_max`.
    pub d_max: usize,
    pub acv: AcvConfig,
    pub vap: VapConfig,
    /// F2I hypothesis count; `None` uses `min(24, D/4)`.
    pub k: Option<usize>,
    pub feature_backend: FeatureBackend,
    pub regularizer: RegularizerKind,
    /// Gain applied after each regularization, setting softmax sharpness.
    pub logit_scale: f32,
    /// MAPM weights for levels 1, 2, 3.
    pub patch_weights: [PatchWeights; 3],
}

impl PipelineConfig {
    pub fn new(mode: PipelineMode, d_max: usize) -> Self {
        Self {
            mode,
            d_max,
            acv: AcvConfig { d_max, ..AcvConfig::default() },
            vap: VapConfig::default(),
            k: None,
            feature_backend: FeatureBackend::default(),
            regularizer: RegularizerKind::default(),
            logit_scale: DEFAULT_LOGIT_SCALE,
            patch_weights: [1, 2, 3].map(|l| PatchWeights::uniform(l).expect("levels 1..=3")),
        }
    }

    pub fn with_d_max(mut self, d_max: usize) -> Self {
        self.d_max = d_max;
        self.acv.d_max = d_max;
        self
    }

    pub fn effective_k(&self) -> usize {
        self.k.unwrap_or_else(|| DEFAULT_K.min(self.d_max / 4))
    }

    pub fn validate(&self) -> Result<()> {
        let step = match self.mode {
            PipelineMode::Acv => 4,
            PipelineMode::FastAcv => 8,
        };
        if self.d_max == 0 || self.d_max % step != 0 {
            return Err(invalid(format!(
                "d_max {} must be a positive multiple of {step} in {} mode",
                self.d_max,
                self.mode.name()
            )));
        }
        if self.acv.d_max != self.d_max {
            return Err(invalid(format!("acv.d_max {} differs from d_max {}", self.acv.d_max, self.d_max)));
        }
        self.acv.validate()?;
        self.vap.validate()?;
        if self.mode == PipelineMode::FastAcv {
            if self.vap.upsample_factor != 2 {
                return Err(invalid("the fast pipeline upsamples 1/8 to 1/4: VAP factor must be 2"));
            }
            let k = self.effective_k();
            if k == 0 || k > self.d_max / 4 {
                return Err(invalid(format!("k {k} outside 1..={}", self.d_max / 4)));
            }
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(invalid("logit scale must be finite and positive"));
        }
        for (i, w) in self.patch_weights.iter().enumerate() {
            if w.level() != i + 1 {
                return Err(invalid(format!("patch weights {} are for level {}", i + 1, w.level())));
            }
        }
        Ok(())
    }
}

/// Wall-clock time per stage in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub features_ms: f64,
    pub construction_ms: f64,
    pub aggregation_ms: f64,
    pub prediction_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.features_ms + self.construction_ms + self.aggregation_ms + self.prediction_ms
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Full-resolution disparity.
    pub disparity: DisparityMap,
    /// Disparity at 1/4 resolution, in 1/4-resolution pixels.
    pub quarter: DisparityMap,
    pub timings: StageTimings,
    pub accounting: VolumeAccounting,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn check_pair(left: &GrayImage, right: &GrayImage) -> Result<()> {
    if !left.same_size(right) {
        return Err(shape_err(format!(
            "image size mismatch: left {}x{}, right {}x{}",
            left.height, left.width, right.height, right.width
        )));
    }
    if left.height % 8 != 0 || left.width % 8 != 0 || left.height == 0 || left.width == 0 {
        return Err(shape_err(format!(
            "image {}x{}: dimensions must be positive multiples of 8",
            left.height, left.width
        )));
    }
    Ok(())
}

/// Scales a low-resolution disparity map by `factor` in value and size.
///
/// Output pixel `X` samples `(X + 0.5) / factor - 0.5`, clamped, so the
/// output range stays within the input range times `factor`.
pub fn upsample_disparity(map: &DisparityMap, factor: usize, out_h: usize, out_w: usize) -> Result<DisparityMap> {
    let f = FeatureMap::new(1, map.height, map.width, map.data.iter().map(|v| v * factor as f32).collect())?
        .with_scale(map.scale);
    let up = upsample_features(&f, factor, out_h, out_w)?;
    Ok(DisparityMap::new(out_h, out_w, up.data)?.with_scale(1))
}

/// Left/right features at 1/4 resolution for the concatenation volume:
/// l1-resolution features tiled to `N_c` channels and shifted to unit
/// channel mean, so compressing a filtered volume by its channel mean
/// returns the attention weights.
fn concat_features(quarter: &FeatureMap, channels: usize) -> Result<FeatureMap> {
    Ok(unit_mean(&fit_channels(quarter, channels)?))
}

pub fn run_pipeline(left: &GrayImage, right: &GrayImage, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    match cfg.mode {
        PipelineMode::Acv => acv_forward(left, right, cfg),
        PipelineMode::FastAcv => fast_acv_forward(left, right, cfg),
    }
}

/// ACV matcher; see [`acv_forward`].
pub fn run_acv_pipeline(left: &GrayImage, right: &GrayImage, cfg: &PipelineConfig) -> Result<DisparityMap> {
    Ok(acv_forward(left, right, &PipelineConfig { mode: PipelineMode::Acv, ..cfg.clone() })?.disparity)
}

/// Fast-ACV matcher; see [`fast_acv_forward`].
pub fn run_fast_acv_pipeline(left: &GrayImage, right: &GrayImage, cfg: &PipelineConfig) -> Result<DisparityMap> {
    Ok(fast_acv_forward(left, right, &PipelineConfig { mode: PipelineMode::FastAcv, ..cfg.clone() })?.disparity)
}

/// features, MAPM volume, attention weights, concatenation volume,
/// attention filter, channel mean, regularize, softmax, soft-argmin,
/// x4 and bilinear upsampling.
///
/// Regularization filters only the spatial axes. A replicated edge along
/// `d` weights bin 0 twice and pulls one-bin disparities to zero.
pub fn acv_forward(left: &GrayImage, right: &GrayImage, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    check_pair(left, right)?;
    let reg = pipeline_regularizer(cfg.regularizer, cfg.logit_scale);
    let mut acc = VolumeAccounting::new();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let pl = build_feature_pyramid(left, cfg.feature_backend, cfg.acv.group_split)?;
    let pr = build_feature_pyramid(right, cfg.feature_backend, cfg.acv.group_split)?;
    let cl = concat_features(&pl.quarter, cfg.acv.concat_channels)?;
    let cr = concat_features(&pr.quarter, cfg.acv.concat_channels)?;
    timings.features_ms = ms_since(t);

    let t = Instant::now();
    let levels: [MapmLevel<'_>; 3] = std::array::from_fn(|i| MapmLevel {
        left: &pl.levels[i],
        right: &pr.levels[i],
        weights: cfg.patch_weights[i],
    });
    let c_patch = build_mapm_volume(&levels, &cfg.acv)?;
    acc.alloc("c_patch", c_patch.len());
    // the regularized copy lives only inside attention generation
    acc.alloc("c_patch_reg", c_patch.len());
    let a = generate_attention_weights(&c_patch, &reg);
    acc.alloc("attention", a.len());
    acc.free("c_patch_reg");
    acc.free("c_patch");
    drop(c_patch);
    let concat = build_concat_volume(&cl, &cr, cfg.acv.quarter_disparities())?;
    acc.alloc("concat", concat.len());
    let filtered = attention_filter(&a, &concat)?;
    acc.alloc("filtered", filtered.len());
    acc.free("concat");
    drop(concat);
    timings.construction_ms = ms_since(t);

    let t = Instant::now();
    let compressed = channel_mean(&filtered);
    acc.alloc("compressed", compressed.len());
    acc.free("filtered");
    drop(filtered);
    let aggregated = reg.regularize(&compressed);
    acc.alloc("aggregated", aggregated.len());
    acc.free("compressed");
    timings.aggregation_ms = ms_since(t);

    let t = Instant::now();
    let p = softmax_over_disparity(&aggregated)?;
    acc.alloc("probability", p.data().len());
    let quarter = soft_argmin(&p);
    let disparity = upsample_disparity(&quarter, 4, left.height, left.width)?;
    acc.free("probability");
    acc.free("aggregated");
    acc.free("attention");
    timings.prediction_ms = ms_since(t);

    Ok(PipelineOutput { disparity, quarter, timings, accounting: acc })
}

/// 1/8 group correlation, regularize and compress, VAP at 1/4, F2I top-K,
/// compact concatenation volume, fast attention filter, projection
/// compression, regularize, top-2 prediction, x4 and bilinear upsampling.
///
/// Both regularizations filter only the spatial axes: the 1/8 volume has
/// too few disparity bins for a box along `d`, and the compact volume's
/// slices are rank-ordered hypotheses.
pub fn fast_acv_forward(left: &GrayImage, right: &GrayImage, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    check_pair(left, right)?;
    let reg = pipeline_regularizer(cfg.regularizer, cfg.logit_scale);
    let mut acc = VolumeAccounting::new();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let pl = build_feature_pyramid(left, cfg.feature_backend, cfg.acv.group_split)?;
    let pr = build_feature_pyramid(right, cfg.feature_backend, cfg.acv.group_split)?;
    let channels = features::group_multiple(pl.eighth.channels, FAST_GROUPS);
    let gl = fit_channels(&pl.eighth, channels)?;
    let gr = fit_channels(&pr.eighth, channels)?;
    let cl = fit_channels(&pl.quarter, cfg.acv.concat_channels)?;
    let cr = fit_channels(&pr.quarter, cfg.acv.concat_channels)?;
    timings.features_ms = ms_since(t);

    let t = Instant::now();
    let corr = group_correlation(&gl, &gr, cfg.d_max / 8, FAST_GROUPS)?;
    acc.alloc("corr_low", corr.len());
    let corr_reg = reg.regularize(&corr);
    acc.alloc("corr_low_reg", corr_reg.len());
    acc.free("corr_low");
    drop(corr);
    let v_low = channel_mean(&corr_reg);
    acc.alloc("v_low", v_low.len());
    acc.free("corr_low_reg");
    drop(corr_reg);

    let vap = volume_attention_propagation(&v_low, &pl.quarter, &pr.quarter, &cfg.vap)?;
    acc.alloc("v_init", vap.v_init.len());
    acc.alloc("v_unfold", vap.v_init.len() * crate::volume::CROSS_SIZE);
    acc.alloc("v_p", vap.v_p.len());
    acc.free("v_unfold");
    acc.free("v_init");
    acc.free("v_low");
    let p = softmax_over_disparity(&vap.v_p)?;
    acc.alloc("probability", p.data().len());
    acc.free("v_p");
    drop(vap);
    let hyp = f2i_topk(&p, cfg.effective_k())?;
    acc.alloc("hypotheses", 2 * hyp.a_f().len());
    acc.free("probability");
    drop(p);

    let compact = build_compact_concat(&cl, &cr, &hyp)?;
    acc.alloc("compact", compact.len());
    let filtered = fast_attention_filter(&hyp, &compact)?;
    acc.alloc("filtered", filtered.len());
    acc.free("compact");
    drop(compact);
    timings.construction_ms = ms_since(t);

    let t = Instant::now();
    let compressed = concat_projection(&filtered)?;
    acc.alloc("compressed", compressed.len());
    acc.free("filtered");
    drop(filtered);
    let aggregated = reg.regularize(&compressed);
    acc.alloc("aggregated", aggregated.len());
    acc.free("compressed");
    timings.aggregation_ms = ms_since(t);

    let t = Instant::now();
    let quarter = predict_from_hypotheses(&aggregated, &hyp, FAST_TOP.min(hyp.k()))?.with_scale(4);
    let disparity = upsample_disparity(&quarter, 4, left.height, left.width)?;
    acc.free("aggregated");
    acc.free("hypotheses");
    timings.prediction_ms = ms_since(t);

    Ok(PipelineOutput { disparity, quarter, timings, accounting: acc })
}
