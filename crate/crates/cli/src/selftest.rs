//! `selftest`: every optimized operation against its naive oracle on
//! randomized small instances.

use std::io::Write;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use stereo_costvol::acv::{
    attention_filter, build_mapm_volume, generate_attention_weights, mapm_level, regress_attention_disparity,
    AcvConfig, Identity, MapmLevel, PatchWeights,
};
use stereo_costvol::fast_acv::{
    build_compact_concat, confidence, cross_propagate, estimate_uncertainty, f2i_topk, fast_attention_filter,
    matching_score, predict_from_hypotheses, propagation_weights, regress_initial_disparity, sample_cross,
    sample_cross_disparities, volume_attention_propagation, CrossField, HypothesisSet, VapConfig,
};
use stereo_costvol::io::GrayImage;
use stereo_costvol::metrics::{self, EvalMask, LossWeights};
use stereo_costvol::par::with_threads;
use stereo_costvol::pipeline::{
    box2d_regularize, box3d_regularize, census_features, concat_projection, pipeline_regularizer, RegularizerKind,
};
use stereo_costvol::reference;
use stereo_costvol::rng::SeededRng;
use stereo_costvol::volume::{
    build_concat_volume, channel_mean, group_correlation, soft_argmin, softmax_over_disparity, unfold_cross,
    upsample_volume_trilinear, CostVolume, DisparityMap, FeatureMap, ProbabilityVolume, ScalarField,
};

use crate::{EXIT_FAILURE, EXIT_OK};

/// Mixed tolerance for floating-point oracles: `|a - b| <= TOL * max(1, |b|)`.
pub const TOL: f64 = 1e-6;
/// Tolerance for scalar reductions (metrics and losses).
pub const REDUCTION_TOL: f64 = 1e-9;
/// Largest spatial side of a random instance.
pub const MAX_SIDE: usize = 16;
/// Largest disparity count of a random instance.
pub const MAX_DISP: usize = 8;

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per operation.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long)]
    pub json: bool,
}

pub type SmoothL1Fn = fn(&DisparityMap, &DisparityMap, &EvalMask) -> stereo_costvol::Result<f64>;

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    pub instances: usize,
    /// Implementation under test for the smooth-L1 check.
    pub smooth_l1: SmoothL1Fn,
}

impl SelftestOptions {
    pub fn new(seed: u64, instances: usize) -> Self {
        Self { seed, instances, smooth_l1: metrics::smooth_l1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpResult {
    pub op: &'static str,
    pub passed: usize,
    pub total: usize,
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestSummary {
    pub ops: Vec<OpResult>,
}

impl SelftestSummary {
    pub fn all_passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed == o.total)
    }

    pub fn first_failing(&self) -> Option<&OpResult> {
        self.ops.iter().find(|o| o.passed != o.total)
    }

    pub fn op(&self, name: &str) -> Option<&OpResult> {
        self.ops.iter().find(|o| o.op == name)
    }
}

type Check = std::result::Result<(), String>;
type CheckFn = fn(&mut SeededRng, &SelftestOptions) -> Check;

/// Every check, by operation name.
pub const CHECKS: &[(&str, CheckFn)] = &[
    ("softmax_over_disparity", check_softmax),
    ("soft_argmin", check_soft_argmin),
    ("group_correlation", check_group_correlation),
    ("build_concat_volume", check_concat),
    ("mapm_level", check_mapm_level),
    ("build_mapm_volume", check_mapm_volume),
    ("upsample_volume_trilinear", check_trilinear),
    ("unfold_cross", check_unfold),
    ("channel_mean", check_channel_mean),
    ("box3d_regularize", check_box3d),
    ("box2d_regularize", check_box2d),
    ("generate_attention_weights", check_attention_weights),
    ("attention_filter", check_attention_filter),
    ("regress_attention_disparity", check_regress_attention),
    ("regress_initial_disparity", check_regress_initial),
    ("sample_cross", check_sample_cross),
    ("sample_cross_disparities", check_sample_cross_disparities),
    ("matching_score", check_matching_score),
    ("estimate_uncertainty", check_uncertainty),
    ("confidence", check_confidence),
    ("propagation_weights", check_propagation_weights),
    ("cross_propagate", check_cross_propagate),
    ("volume_attention_propagation", check_vap),
    ("f2i_topk", check_topk),
    ("build_compact_concat", check_compact_concat),
    ("fast_attention_filter", check_fast_attention_filter),
    ("predict_from_hypotheses", check_predict),
    ("census_features", check_census),
    ("concat_projection", check_concat_projection),
    ("smooth_l1", check_smooth_l1),
    ("epe", check_epe),
    ("d1", check_d1),
    ("bad_x", check_bad_x),
    ("acv_total_loss", check_acv_loss),
    ("fast_acv_total_loss", check_fast_loss),
];

/// Runs every check on `opts.instances` instances each.
pub fn run_checks(opts: &SelftestOptions) -> SelftestSummary {
    let ops = CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut passed = 0;
            let mut first_failure = None;
            for n in 0..opts.instances {
                let mut rng = SeededRng::with_stream(opts.seed.wrapping_add(i as u64), n as u64);
                match check(&mut rng, opts) {
                    Ok(()) => passed += 1,
                    Err(e) => {
                        if first_failure.is_none() {
                            first_failure = Some(format!("instance {n}: {e}"));
                        }
                    }
                }
            }
            OpResult { op: name, passed, total: opts.instances, first_failure }
        })
        .collect();
    SelftestSummary { ops }
}

pub fn cmd_selftest(a: &SelftestArgs, threads: Option<usize>, out: &mut dyn Write) -> Result<i32> {
    let threads = crate::resolve_threads(threads, None)?;
    let opts = SelftestOptions::new(a.seed, a.instances);
    let summary = with_threads(threads, || run_checks(&opts));
    report(&summary, a.json, out)
}

/// Prints `summary` and returns the exit status.
pub fn report(summary: &SelftestSummary, json: bool, out: &mut dyn Write) -> Result<i32> {
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(summary)?)?;
    } else {
        for o in &summary.ops {
            let status = if o.passed == o.total { "ok" } else { "FAIL" };
            writeln!(out, "{:<30} {:>4}/{:<4} {status}", o.op, o.passed, o.total)?;
        }
        writeln!(out, "operations tested: {}", summary.ops.len())?;
    }
    match summary.first_failing() {
        None => {
            if !json {
                writeln!(out, "selftest passed")?;
            }
            Ok(EXIT_OK)
        }
        Some(o) => {
            writeln!(out, "selftest failed: {} ({})", o.op, o.first_failure.as_deref().unwrap_or(""))?;
            Ok(EXIT_FAILURE)
        }
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

fn expect_close(what: &str, got: f64, want: f64, tol: f64) -> Check {
    if close(got, want, tol) {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want}"))
    }
}

fn expect_volume(got: &CostVolume, want: &CostVolume, exact: bool) -> Check {
    let shape = |v: &CostVolume| (v.channels(), v.disparities(), v.height(), v.width());
    if shape(got) != shape(want) {
        return Err(format!("shape {:?}, want {:?}", shape(got), shape(want)));
    }
    for (i, (a, b)) in got.data().iter().zip(want.data()).enumerate() {
        let ok = if exact { a.to_bits() == b.to_bits() } else { close(*a as f64, *b as f64, TOL) };
        if !ok {
            return Err(format!("element {i}: got {a}, want {b}"));
        }
    }
    Ok(())
}

fn expect_cross(got: &CrossField, want: &CrossField, exact: bool) -> Check {
    if (got.height, got.width) != (want.height, want.width) {
        return Err("cross field shape".into());
    }
    for (i, (a, b)) in got.data.iter().zip(&want.data).enumerate() {
        let ok = if exact { a.to_bits() == b.to_bits() } else { close(*a as f64, *b as f64, TOL) };
        if !ok {
            return Err(format!("element {i}: got {a}, want {b}"));
        }
    }
    Ok(())
}

fn err(e: stereo_costvol::Error) -> String {
    e.to_string()
}

fn side(rng: &mut SeededRng) -> usize {
    rng.int(1, MAX_SIDE)
}

fn grid(rng: &mut SeededRng) -> (usize, usize, usize) {
    (rng.int(1, MAX_DISP), side(rng), side(rng))
}

fn logits(rng: &mut SeededRng, nd: usize, h: usize, w: usize) -> CostVolume {
    let scale = rng.uniform(0.1, 20.0);
    let data = rng.values(nd * h * w, -scale, scale);
    CostVolume::new(1, nd, h, w, data).expect("finite")
}

fn probability(rng: &mut SeededRng, nd: usize, h: usize, w: usize) -> ProbabilityVolume {
    softmax_over_disparity(&logits(rng, nd, h, w)).expect("single channel")
}

/// Probabilities drawn from a few levels, normalized, so that ties are common.
fn tied_probability(rng: &mut SeededRng, nd: usize, h: usize, w: usize) -> ProbabilityVolume {
    let levels = [1.0f32, 2.0, 2.0, 4.0];
    let mut data = vec![0.0f32; nd * h * w];
    for i in 0..h * w {
        let raw: Vec<f32> = (0..nd).map(|_| levels[rng.int(0, levels.len() - 1)]).collect();
        let total: f32 = raw.iter().sum();
        for (d, r) in raw.iter().enumerate() {
            data[d * h * w + i] = r / total;
        }
    }
    ProbabilityVolume::new(nd, h, w, data).expect("normalized")
}

fn features_pair(rng: &mut SeededRng, c: usize, h: usize, w: usize) -> (FeatureMap, FeatureMap) {
    (rng.feature_map(c, h, w), rng.feature_map(c, h, w))
}

fn patch_weights(rng: &mut SeededRng, level: usize) -> PatchWeights {
    PatchWeights::new(level, std::array::from_fn(|_| rng.uniform(-1.0, 1.0))).expect("valid level")
}

fn hypotheses(rng: &mut SeededRng, nd: usize, h: usize, w: usize) -> (HypothesisSet, usize) {
    let k = rng.int(1, nd);
    (f2i_topk(&probability(rng, nd, h, w), k).expect("k in range"), k)
}

fn map(rng: &mut SeededRng, h: usize, w: usize, lo: f32, hi: f32) -> DisparityMap {
    DisparityMap::new(h, w, rng.values(h * w, lo, hi)).expect("finite")
}

fn mask(rng: &mut SeededRng, h: usize, w: usize) -> EvalMask {
    let mut valid: Vec<bool> = (0..h * w).map(|_| rng.unit() < 0.7).collect();
    let keep = rng.int(0, h * w - 1);
    valid[keep] = true;
    EvalMask::new(h, w, valid).expect("sized")
}

fn valid_residuals(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Vec<(f64, f64)> {
    let mut r = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if mask.is_valid(y, x) {
                r.push((pred.get(y, x) as f64 - gt.get(y, x) as f64, gt.get(y, x) as f64));
            }
        }
    }
    r
}

fn naive_smooth_l1(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> f64 {
    let r = valid_residuals(pred, gt, mask);
    r.iter().map(|(e, _)| reference::smooth_l1(*e)).sum::<f64>() / r.len() as f64
}

fn check_softmax(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let v = logits(rng, nd, h, w);
    let p = softmax_over_disparity(&v).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            let l: Vec<f32> = (0..nd).map(|d| v.get(0, d, y, x)).collect();
            let want = reference::softmax(&l);
            for (d, &pw) in want.iter().enumerate() {
                expect_close("probability", p.get(d, y, x) as f64, pw, TOL)?;
            }
        }
    }
    Ok(())
}

fn check_soft_argmin(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let p = probability(rng, nd, h, w);
    let d = soft_argmin(&p);
    for y in 0..h {
        for x in 0..w {
            expect_close("expectation", d.get(y, x) as f64, reference::expectation(&p.pixel(y, x)), TOL)?;
        }
    }
    Ok(())
}

fn check_group_correlation(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let (g, cpg) = (rng.int(1, 4), rng.int(1, 4));
    let (l, r) = features_pair(rng, g * cpg, h, w);
    let got = group_correlation(&l, &r, nd, g).map_err(err)?;
    expect_volume(&got, &reference::group_correlation(&l, &r, nd, g), false)
}

fn check_concat(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let nc = rng.int(1, 6);
    let (l, r) = features_pair(rng, nc, h, w);
    let got = build_concat_volume(&l, &r, nd).map_err(err)?;
    expect_volume(&got, &reference::concat_volume(&l, &r, nd), true)
}

fn check_mapm_level(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let level = rng.int(1, 3);
    let (g, cpg) = (rng.int(1, 3), rng.int(1, 3));
    let (l, r) = features_pair(rng, g * cpg, h, w);
    let pw = patch_weights(rng, level);
    let got = mapm_level(&l, &r, level, &pw, nd, g).map_err(err)?;
    expect_volume(&got, &reference::mapm_level(&l, &r, &pw, nd, g), false)
}

fn check_mapm_volume(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let split = [rng.int(1, 2), rng.int(1, 2), rng.int(1, 2)];
    let cfg = AcvConfig { d_max: 4 * rng.int(1, MAX_DISP), n_groups: split.iter().sum(), group_split: split, concat_channels: 4 };
    let nd = cfg.quarter_disparities();
    let feats: Vec<(FeatureMap, FeatureMap)> = split.iter().map(|&s| features_pair(rng, 2 * s, h, w)).collect();
    let weights: Vec<PatchWeights> = (1..=3).map(|l| patch_weights(rng, l)).collect();
    let levels: [MapmLevel; 3] =
        std::array::from_fn(|i| MapmLevel { left: &feats[i].0, right: &feats[i].1, weights: weights[i] });
    let got = build_mapm_volume(&levels, &cfg).map_err(err)?;
    let mut planes = Vec::new();
    for i in 0..3 {
        planes.extend_from_slice(reference::mapm_level(&feats[i].0, &feats[i].1, &weights[i], nd, split[i]).data());
    }
    let want = CostVolume::new(cfg.n_groups, nd, h, w, planes).map_err(err)?;
    expect_volume(&got, &want, false)
}

fn check_trilinear(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = (rng.int(1, 4), rng.int(1, 8), rng.int(1, 8));
    let factor = rng.int(1, 3);
    let nc = rng.int(1, 2);
    let v = rng.volume(nc, nd, h, w);
    let got = upsample_volume_trilinear(&v, factor).map_err(err)?;
    expect_volume(&got, &reference::trilinear(&v, factor), false)
}

fn check_unfold(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let v = rng.volume(1, nd, h, w);
    let r = rng.int(1, 3);
    expect_volume(&unfold_cross(&v, r).map_err(err)?, &reference::unfold_cross(&v, r), true)
}

fn check_channel_mean(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let c = rng.int(1, 6);
    let v = rng.volume(c, nd, h, w);
    let want = CostVolume::from_fn(1, nd, h, w, |_, d, y, x| {
        ((0..c).map(|ch| v.get(ch, d, y, x) as f64).sum::<f64>() / c as f64) as f32
    })
    .map_err(err)?;
    expect_volume(&channel_mean(&v), &want, false)
}

fn check_box3d(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let nc = rng.int(1, 3);
    let v = rng.volume(nc, nd, h, w);
    let r = rng.int(1, 2);
    expect_volume(&box3d_regularize(&v, r), &reference::box3d(&v, r), false)
}

/// Spatial box filter from the dense 3D oracle, one disparity slice at a
/// time so that its d-axis is a no-op.
fn box2d_oracle(v: &CostVolume, r: usize) -> CostVolume {
    let (c, nd, h, w) = (v.channels(), v.disparities(), v.height(), v.width());
    let mut planes = Vec::new();
    for ch in 0..c {
        for d in 0..nd {
            let slice = CostVolume::new(1, 1, h, w, v.plane(ch, d).to_vec()).expect("finite");
            planes.extend_from_slice(reference::box3d(&slice, r).data());
        }
    }
    CostVolume::new(c, nd, h, w, planes).expect("finite")
}

fn check_box2d(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let c = rng.int(1, 3);
    let v = rng.volume(c, nd, h, w);
    let r = rng.int(1, 2);
    expect_volume(&box2d_regularize(&v, r), &box2d_oracle(&v, r), false)
}

fn check_attention_weights(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let g = rng.int(1, 5);
    let v = rng.volume(g, nd, h, w);
    let mean = |v: &CostVolume| {
        CostVolume::from_fn(1, nd, h, w, |_, d, y, x| {
            ((0..g).map(|ch| v.get(ch, d, y, x) as f64).sum::<f64>() / g as f64) as f32
        })
        .expect("finite")
    };
    expect_volume(&generate_attention_weights(&v, &Identity), &mean(&v), false)?;
    let gain = rng.uniform(0.5, 4.0);
    let reg = pipeline_regularizer(RegularizerKind::Box3d { radius: 1 }, gain);
    let boxed = mean(&box2d_oracle(&v, 1));
    let want = CostVolume::from_fn(1, nd, h, w, |_, d, y, x| boxed.get(0, d, y, x) * gain).map_err(err)?;
    expect_volume(&generate_attention_weights(&v, &reg), &want, false)
}

fn check_attention_filter(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let a = rng.volume(1, nd, h, w);
    let nc = rng.int(1, 6);
    let c = rng.volume(nc, nd, h, w);
    expect_volume(&attention_filter(&a, &c).map_err(err)?, &reference::attention_filter(&a, &c), false)
}

fn check_regress_attention(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let a = logits(rng, nd, h, w);
    let d = regress_attention_disparity(&a).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            let l: Vec<f32> = (0..nd).map(|i| a.get(0, i, y, x)).collect();
            let want: f64 = reference::softmax(&l).iter().enumerate().map(|(i, p)| i as f64 * p).sum();
            expect_close("attention disparity", d.get(y, x) as f64, want, TOL)?;
        }
    }
    Ok(())
}

fn check_regress_initial(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let v = logits(rng, nd, h, w);
    let (p, d) = regress_initial_disparity(&v).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            let l: Vec<f32> = (0..nd).map(|i| v.get(0, i, y, x)).collect();
            let sm = reference::softmax(&l);
            for (i, pw) in sm.iter().enumerate() {
                expect_close("p_init", p.get(i, y, x) as f64, *pw, TOL)?;
            }
            let want: f64 = sm.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
            expect_close("d_init", d.get(y, x) as f64, want, TOL)?;
        }
    }
    Ok(())
}

fn check_sample_cross(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let vals = rng.values(h * w, -5.0, 5.0);
    let r = rng.int(1, 3);
    expect_cross(&sample_cross(&vals, h, w, r).map_err(err)?, &reference::sample_cross(&vals, h, w, r), true)
}

fn check_sample_cross_disparities(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let d = map(rng, h, w, 0.0, MAX_DISP as f32);
    let r = rng.int(1, 3);
    let got = sample_cross_disparities(&d, r).map_err(err)?;
    expect_cross(&got, &reference::sample_cross(d.data(), h, w, r), true)
}

fn check_matching_score(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let nc = rng.int(1, 6);
    let (l, r) = features_pair(rng, nc, h, w);
    let d = map(rng, h, w, -1.0, w as f32 + 1.0);
    let d_m = reference::sample_cross(d.data(), h, w, 1);
    expect_cross(&matching_score(&l, &r, &d_m).map_err(err)?, &reference::matching_score(&l, &r, &d_m), false)
}

fn check_uncertainty(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let p = probability(rng, nd, h, w);
    let d = soft_argmin(&p);
    let u = estimate_uncertainty(&p, &d).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            let want = reference::variance(&p.pixel(y, x), d.get(y, x) as f64);
            expect_close("variance", u.get(y, x) as f64, want, TOL)?;
        }
    }
    Ok(())
}

fn check_confidence(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let u = ScalarField { height: h, width: w, data: rng.values(h * w, 0.0, 20.0) };
    let (alpha, beta) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    let c = confidence(&u, alpha, beta);
    for (got, v) in c.data.iter().zip(&u.data) {
        expect_close("confidence", *got as f64, alpha as f64 + beta as f64 * *v as f64, TOL)?;
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_propagation_weights(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let s = CrossField { height: h, width: w, data: rng.values(5 * h * w, -3.0, 3.0) };
    let c = CrossField { height: h, width: w, data: rng.values(5 * h * w, -50.0, 50.0) };
    let field = propagation_weights(&s, &c).map_err(err)?;
    for ((got, sv), cv) in field.w.data.iter().zip(&s.data).zip(&c.data) {
        let g = sigmoid(*cv as f64);
        if !(0.0..=1.0).contains(&g) {
            return Err(format!("sigmoid({cv}) = {g} outside [0, 1]"));
        }
        expect_close("weight", *got as f64, *sv as f64 * g, TOL)?;
        if got.abs() > sv.abs() {
            return Err(format!("|W| = {got} exceeds |S| = {sv}"));
        }
    }
    Ok(())
}

fn check_cross_propagate(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let v_u = rng.volume(5, nd, h, w);
    let s = CrossField { height: h, width: w, data: rng.values(5 * h * w, -10.0, 10.0) };
    let c = CrossField { height: h, width: w, data: rng.values(5 * h * w, -10.0, 10.0) };
    let field = propagation_weights(&s, &c).map_err(err)?;
    let got = cross_propagate(&v_u, &field).map_err(err)?;
    expect_volume(&got, &reference::cross_propagate(&v_u, &field.w), false)
}

/// Each VAP stage against its oracle, fed with the previous stage's output.
fn check_vap(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = (rng.int(1, 4), rng.int(1, 8), rng.int(1, 8));
    let v_low = rng.volume(1, nd, h, w);
    let nc = rng.int(1, 4);
    let (l, r) = features_pair(rng, nc, 2 * h, 2 * w);
    let cfg = VapConfig { radius: rng.int(1, 2), alpha: rng.uniform(-1.0, 2.0), beta: rng.uniform(-2.0, 0.0), ..VapConfig::default() };
    let out = volume_attention_propagation(&v_low, &l, &r, &cfg).map_err(err)?;
    expect_volume(&out.v_init, &reference::trilinear(&v_low, 2), false)?;
    let d_m = reference::sample_cross(out.d_init.data(), 2 * h, 2 * w, cfg.radius);
    expect_cross(&out.field.s, &reference::matching_score(&l, &r, &d_m), false)?;
    let conf: Vec<f32> = out.uncertainty.data.iter().map(|u| cfg.alpha + cfg.beta * u).collect();
    expect_cross(&out.field.c, &reference::sample_cross(&conf, 2 * h, 2 * w, cfg.radius), false)?;
    let unfolded = reference::unfold_cross(&out.v_init, cfg.radius);
    expect_volume(&out.v_p, &reference::cross_propagate(&unfolded, &out.field.w), false)
}

fn check_topk(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let p = if rng.unit() < 0.5 { tied_probability(rng, nd, h, w) } else { probability(rng, nd, h, w) };
    let k = rng.int(1, nd);
    let hyp = f2i_topk(&p, k).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            for (i, (d, a)) in reference::topk(&p.pixel(y, x), k).into_iter().enumerate() {
                if hyp.disparity(i, y, x) as usize != d || hyp.weight(i, y, x).to_bits() != a.to_bits() {
                    return Err(format!(
                        "({y}, {x}) rank {i}: got ({}, {}), want ({d}, {a})",
                        hyp.disparity(i, y, x),
                        hyp.weight(i, y, x)
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_compact_concat(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let (hyp, _) = hypotheses(rng, nd, h, w);
    let nc = rng.int(1, 4);
    let (l, r) = features_pair(rng, nc, h, w);
    expect_volume(&build_compact_concat(&l, &r, &hyp).map_err(err)?, &reference::compact_concat(&l, &r, &hyp), true)
}

fn check_fast_attention_filter(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let (hyp, k) = hypotheses(rng, nd, h, w);
    let nc = rng.int(1, 6);
    let c = rng.volume(nc, k, h, w);
    expect_volume(&fast_attention_filter(&hyp, &c).map_err(err)?, &reference::fast_attention_filter(&hyp, &c), false)
}

fn check_predict(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let (hyp, k) = hypotheses(rng, nd, h, w);
    let v = logits(rng, k, h, w);
    let top = rng.int(1, k);
    let d = predict_from_hypotheses(&v, &hyp, top).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            let vals: Vec<f32> = (0..k).map(|i| v.get(0, i, y, x)).collect();
            let hyps: Vec<u32> = (0..k).map(|i| hyp.disparity(i, y, x)).collect();
            expect_close("prediction", d.get(y, x) as f64, reference::top_prediction(&vals, &hyps, top), TOL)?;
        }
    }
    Ok(())
}

fn check_census(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let window = [3, 5, 7][rng.int(0, 2)];
    // few gray levels so that equal neighbors occur
    let pixels: Vec<f32> = (0..h * w).map(|_| rng.int(0, 3) as f32 / 3.0).collect();
    let img = GrayImage::new(h, w, pixels.clone()).map_err(err)?;
    let got = census_features(&img, window).map_err(err)?;
    let want = reference::census(&pixels, h, w, window);
    if got.data() != want.as_slice() {
        return Err(format!("census window {window} differs"));
    }
    Ok(())
}

fn check_concat_projection(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (nd, h, w) = grid(rng);
    let nc = 2 * rng.int(1, 4);
    let v = rng.volume(nc, nd, h, w);
    expect_volume(&concat_projection(&v).map_err(err)?, &reference::concat_projection(&v), false)
}

fn check_smooth_l1(rng: &mut SeededRng, opts: &SelftestOptions) -> Check {
    for (e, want) in [(0.0f32, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)] {
        let pred = DisparityMap::new(1, 1, vec![10.0 + e]).map_err(err)?;
        let gt = DisparityMap::new(1, 1, vec![10.0]).map_err(err)?;
        let got = (opts.smooth_l1)(&pred, &gt, &EvalMask::all_valid(1, 1)).map_err(err)?;
        expect_close(&format!("smooth_l1 at e = {e}"), got, want, REDUCTION_TOL)?;
    }
    let (h, w) = (side(rng), side(rng));
    let (pred, gt, m) = (map(rng, h, w, 0.0, 8.0), map(rng, h, w, 0.0, 8.0), mask(rng, h, w));
    let got = (opts.smooth_l1)(&pred, &gt, &m).map_err(err)?;
    expect_close("smooth_l1", got, naive_smooth_l1(&pred, &gt, &m), REDUCTION_TOL)
}

fn metric_inputs(rng: &mut SeededRng) -> (DisparityMap, DisparityMap, EvalMask) {
    let (h, w) = (side(rng), side(rng));
    let gt = map(rng, h, w, 0.0, 120.0);
    let noise = map(rng, h, w, -8.0, 8.0);
    let pred = DisparityMap::from_fn(h, w, |y, x| gt.get(y, x) + noise.get(y, x));
    (pred, gt, mask(rng, h, w))
}

fn check_epe(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (pred, gt, m) = metric_inputs(rng);
    let r = valid_residuals(&pred, &gt, &m);
    let want = r.iter().map(|(e, _)| e.abs()).sum::<f64>() / r.len() as f64;
    expect_close("epe", metrics::epe(&pred, &gt, &m).map_err(err)?, want, REDUCTION_TOL)
}

fn check_d1(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (pred, gt, m) = metric_inputs(rng);
    let r = valid_residuals(&pred, &gt, &m);
    let out = r.iter().filter(|(e, g)| e.abs() > (3.0f64).max(0.05 * g)).count();
    let want = 100.0 * out as f64 / r.len() as f64;
    expect_close("d1", metrics::d1(&pred, &gt, &m).map_err(err)?, want, REDUCTION_TOL)
}

fn check_bad_x(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (pred, gt, m) = metric_inputs(rng);
    let x = rng.uniform(0.1, 6.0) as f64;
    let r = valid_residuals(&pred, &gt, &m);
    let want = 100.0 * r.iter().filter(|(e, _)| e.abs() > x).count() as f64 / r.len() as f64;
    expect_close("bad_x", metrics::bad_x(&pred, &gt, &m, x).map_err(err)?, want, REDUCTION_TOL)
}

fn check_acv_loss(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let gt = map(rng, h, w, 0.0, 8.0);
    let outs: Vec<DisparityMap> = (0..4).map(|_| map(rng, h, w, 0.0, 8.0)).collect();
    let m = mask(rng, h, w);
    let lw = LossWeights::default();
    let got = metrics::acv_total_loss(&outs[0], [&outs[1], &outs[2], &outs[3]], &gt, &m, &lw).map_err(err)?;
    let want = [lw.lambda_att, lw.lambda_0, lw.lambda_1, lw.lambda_2]
        .iter()
        .zip(&outs)
        .map(|(l, d)| l * naive_smooth_l1(d, &gt, &m))
        .sum();
    expect_close("acv loss", got, want, REDUCTION_TOL)
}

fn check_fast_loss(rng: &mut SeededRng, _: &SelftestOptions) -> Check {
    let (h, w) = (side(rng), side(rng));
    let (gt, a, f) = (map(rng, h, w, 0.0, 8.0), map(rng, h, w, 0.0, 8.0), map(rng, h, w, 0.0, 8.0));
    let m = mask(rng, h, w);
    let lw = LossWeights::default();
    let got = metrics::fast_acv_total_loss(&a, &f, &gt, &m, &lw).map_err(err)?;
    let want = lw.lambda_att_f * naive_smooth_l1(&a, &gt, &m) + lw.lambda_f * naive_smooth_l1(&f, &gt, &m);
    expect_close("fast loss", got, want, REDUCTION_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_few_instances_pass() {
        let s = run_checks(&SelftestOptions::new(3, 4));
        assert!(s.all_passed(), "{:?}", s.first_failing());
        assert!(s.ops.len() >= 25);
    }
}
