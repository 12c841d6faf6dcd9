//! Fast attention concatenation volume.
//!
//! Volume attention propagation (VAP) revises an upsampled low-resolution
//! correlation volume with a confidence- and similarity-weighted convex
//! combination over a cross-shaped neighborhood. Fine-to-important (F2I)
//! sampling then keeps the top-K disparity hypotheses per pixel, and the
//! compact concatenation volume built on them is filtered by their
//! probabilities.

use crate::error::{invalid, shape_err, Result};
use crate::par;
use crate::volume::{
    clamp_index, per_pixel_rows, soft_argmin, softmax_kernel, softmax_over_disparity, unfold_cross,
    upsample_volume_trilinear, CostVolume, DisparityMap, FeatureMap, ProbabilityVolume, ScalarField,
    CROSS_OFFSETS, CROSS_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VapConfig {
    pub upsample_factor: usize,
    /// Cross sampling distance; 1 gives a 3x3 sampling block.
    pub radius: usize,
    pub alpha: f32,
    pub beta: f32,
}

impl Default for VapConfig {
    fn default() -> Self {
        Self { upsample_factor: 2, radius: 1, alpha: 1.0, beta: -1.0 }
    }
}

impl VapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(invalid("VAP radius must be >= 1"));
        }
        if self.upsample_factor == 0 {
            return Err(invalid("VAP upsample factor must be >= 1"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(invalid("VAP alpha/beta must be finite"));
        }
        Ok(())
    }
}

/// Five per-pixel planes sampled over the cross neighborhood, in
/// [`CROSS_OFFSETS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl CrossField {
    #[inline]
    pub fn get(&self, m: usize, y: usize, x: usize) -> f32 {
        self.data[(m * self.height + y) * self.width + x]
    }

    pub fn plane(&self, m: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[m * n..(m + 1) * n]
    }

    fn same_shape(&self, other: &CrossField) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Matching scores, sampled confidences and the combined weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationField {
    pub s: CrossField,
    pub c: CrossField,
    pub w: CrossField,
}

/// Per-pixel top-K disparity hypotheses with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    k: usize,
    height: usize,
    width: usize,
    d_hyp: Vec<u32>,
    a_f: Vec<f32>,
}

impl HypothesisSet {
    /// Validates the descending/distinct/range/mass invariants.
    pub fn new(
        k: usize,
        height: usize,
        width: usize,
        disparities: usize,
        d_hyp: Vec<u32>,
        a_f: Vec<f32>,
    ) -> Result<Self> {
        let n = k * height * width;
        if d_hyp.len() != n || a_f.len() != n {
            return Err(shape_err("hypothesis arrays do not match K x H x W"));
        }
        let set = Self { k, height, width, d_hyp, a_f };
        for y in 0..height {
            for x in 0..width {
                let mut seen = vec![false; disparities];
                let mut mass = 0.0f64;
                for i in 0..k {
                    let d = set.disparity(i, y, x) as usize;
                    let a = set.weight(i, y, x);
                    if d >= disparities || seen[d] {
                        return Err(invalid(format!("bad hypothesis {d} at ({y}, {x})")));
                    }
                    seen[d] = true;
                    if !(a >= 0.0) || (i > 0 && a > set.weight(i - 1, y, x)) {
                        return Err(invalid(format!("weights not descending at ({y}, {x})")));
                    }
                    mass += a as f64;
                }
                if mass > 1.0 + crate::volume::NORMALIZATION_TOL {
                    return Err(invalid(format!("weights at ({y}, {x}) sum to {mass}")));
                }
            }
        }
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn d_hyp(&self) -> &[u32] {
        &self.d_hyp
    }
    pub fn a_f(&self) -> &[f32] {
        &self.a_f
    }

    #[inline]
    pub fn disparity(&self, i: usize, y: usize, x: usize) -> u32 {
        self.d_hyp[(i * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn weight(&self, i: usize, y: usize, x: usize) -> f32 {
        self.a_f[(i * self.height + y) * self.width + x]
    }
}

/// `P_init = softmax(v_init)`, `D_init = soft_argmin(P_init)`.
pub fn regress_initial_disparity(v_init: &CostVolume) -> Result<(ProbabilityVolume, DisparityMap)> {
    let p = softmax_over_disparity(v_init)?;
    let d = soft_argmin(&p);
    Ok((p, d))
}

/// Samples a per-pixel map at the center and the four cross neighbors at
/// distance `radius`, replicating edges.
pub fn sample_cross(values: &[f32], height: usize, width: usize, radius: usize) -> Result<CrossField> {
    if radius == 0 {
        return Err(invalid("cross radius must be >= 1"));
    }
    if values.len() != height * width {
        return Err(shape_err("map size"));
    }
    let r = radius as isize;
    let mut data = vec![0.0f32; CROSS_SIZE * height * width];
    par::for_each_chunk(&mut data, (height * width).max(1), |m, plane| {
        let (dy, dx) = CROSS_OFFSETS[m];
        for y in 0..height {
            let sy = clamp_index(y as isize + dy * r, height);
            for x in 0..width {
                plane[y * width + x] = values[sy * width + clamp_index(x as isize + dx * r, width)];
            }
        }
    });
    Ok(CrossField { height, width, data })
}

pub fn sample_cross_disparities(d_init: &DisparityMap, radius: usize) -> Result<CrossField> {
    sample_cross(&d_init.data, d_init.height, d_init.width, radius)
}

/// Right-feature sample at a fractional column, linearly interpolated along
/// the row. `None` outside `[0, width - 1]`.
#[inline]
fn right_sample(row: &[f32], pos: f64) -> Option<f64> {
    let w = row.len();
    if !(pos >= 0.0) || pos > (w - 1) as f64 {
        return None;
    }
    let x0 = pos.floor() as usize;
    let t = pos - x0 as f64;
    if t == 0.0 || x0 + 1 >= w {
        Some(row[x0] as f64)
    } else {
        Some(row[x0] as f64 * (1.0 - t) + row[x0 + 1] as f64 * t)
    }
}

/// `S_m(i) = (1/C) <F_l(i), F_r(i - D_m(i))>`, zero when the sample falls
/// out of frame.
pub fn matching_score(f_l: &FeatureMap, f_r: &FeatureMap, d_m: &CrossField) -> Result<CrossField> {
    if !f_l.same_shape(f_r) {
        return Err(shape_err("left and right feature maps differ in shape"));
    }
    if d_m.height != f_l.height || d_m.width != f_l.width {
        return Err(shape_err("disparity planes and features differ in size"));
    }
    let (c, h, w) = (f_l.channels, f_l.height, f_l.width);
    let inv = 1.0 / c as f64;
    let mut data = vec![0.0f32; CROSS_SIZE * h * w];
    par::for_each_chunk(&mut data, (h * w).max(1), |m, plane| {
        for y in 0..h {
            for x in 0..w {
                let pos = x as f64 - d_m.get(m, y, x) as f64;
                if !(pos >= 0.0) || pos > (w - 1) as f64 {
                    continue;
                }
                let mut acc = 0.0f64;
                for ch in 0..c {
                    let row = &f_r.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                    if let Some(r) = right_sample(row, pos) {
                        acc += f_l.get(ch, y, x) as f64 * r;
                    }
                }
                plane[y * w + x] = (acc * inv) as f32;
            }
        }
    });
    Ok(CrossField { height: h, width: w, data })
}

/// Variance of each pixel's disparity distribution about `d_init`.
pub fn estimate_uncertainty(p_init: &ProbabilityVolume, d_init: &DisparityMap) -> Result<ScalarField> {
    if p_init.height != d_init.height || p_init.width != d_init.width {
        return Err(shape_err("probability volume and disparity map differ in size"));
    }
    let (nd, h, w) = (p_init.disparities, p_init.height, p_init.width);
    let mut data = vec![0.0f32; h * w];
    par::for_each_chunk(&mut data, w.max(1), |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let mean = d_init.get(y, x) as f64;
            let mut acc = 0.0f64;
            for d in 0..nd {
                let e = d as f64 - mean;
                acc += p_init.get(d, y, x) as f64 * e * e;
            }
            *out = acc as f32;
        }
    });
    Ok(ScalarField { height: h, width: w, data })
}

/// `C = alpha + beta * U`.
pub fn confidence(u: &ScalarField, alpha: f32, beta: f32) -> ScalarField {
    ScalarField {
        height: u.height,
        width: u.width,
        data: u.data.iter().map(|&v| alpha + beta * v).collect(),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W_m = S_m * sigmoid(C_m)`.
pub fn propagation_weights(s: &CrossField, c: &CrossField) -> Result<PropagationField> {
    if !s.same_shape(c) {
        return Err(shape_err("score and confidence fields differ in size"));
    }
    let data = s
        .data
        .iter()
        .zip(&c.data)
        .map(|(&s, &c)| (s as f64 * sigmoid(c as f64)) as f32)
        .collect();
    let w = CrossField { height: s.height, width: s.width, data };
    Ok(PropagationField { s: s.clone(), c: c.clone(), w })
}

/// `V_p(i, d) = sum_m V_u_m(i, d) * softmax_m(W_m(i))`.
pub fn cross_propagate(v_u: &CostVolume, field: &PropagationField) -> Result<CostVolume> {
    if v_u.channels != CROSS_SIZE {
        return Err(shape_err(format!("unfolded volume has {} channels, expected 5", v_u.channels)));
    }
    let wts = &field.w;
    if wts.height != v_u.height || wts.width != v_u.width {
        return Err(shape_err("propagation weights and volume differ in size"));
    }
    let (nd, h, w) = (v_u.disparities, v_u.height, v_u.width);
    let data = per_pixel_rows(nd, h, w, |y| {
        let mut row = vec![0.0f32; nd * w];
        let mut logits = [0.0f32; CROSS_SIZE];
        let mut sm = [0.0f64; CROSS_SIZE];
        for x in 0..w {
            for (m, l) in logits.iter_mut().enumerate() {
                *l = wts.get(m, y, x);
            }
            softmax_kernel(&logits, &mut sm);
            for d in 0..nd {
                let mut acc = 0.0f64;
                for (m, p) in sm.iter().enumerate() {
                    acc += v_u.get(m, d, y, x) as f64 * p;
                }
                row[d * w + x] = acc as f32;
            }
        }
        row
    });
    Ok(CostVolume { channels: 1, disparities: nd, height: h, width: w, data, scale: v_u.scale })
}

/// Intermediate products of one VAP pass.
#[derive(Debug, Clone)]
pub struct VapOutput {
    pub v_init: CostVolume,
    pub p_init: ProbabilityVolume,
    pub d_init: DisparityMap,
    pub uncertainty: ScalarField,
    pub field: PropagationField,
    pub v_p: CostVolume,
}

/// Upsamples `v_low` by `cfg.upsample_factor` and runs a single round of
/// cross-shape propagation on it.
pub fn volume_attention_propagation(
    v_low: &CostVolume,
    f_l: &FeatureMap,
    f_r: &FeatureMap,
    cfg: &VapConfig,
) -> Result<VapOutput> {
    cfg.validate()?;
    v_low.require_single_channel("volume_attention_propagation")?;
    let v_init = upsample_volume_trilinear(v_low, cfg.upsample_factor)?;
    let (p_init, d_init) = regress_initial_disparity(&v_init)?;
    let d_m = sample_cross_disparities(&d_init, cfg.radius)?;
    let s = matching_score(f_l, f_r, &d_m)?;
    let uncertainty = estimate_uncertainty(&p_init, &d_init)?;
    let conf = confidence(&uncertainty, cfg.alpha, cfg.beta);
    let c_m = sample_cross(&conf.data, conf.height, conf.width, cfg.radius)?;
    let field = propagation_weights(&s, &c_m)?;
    let v_p = cross_propagate(&unfold_cross(&v_init, cfg.radius)?, &field)?;
    Ok(VapOutput { v_init, p_init, d_init, uncertainty, field, v_p })
}

/// Orders `(value, index)` pairs by descending value, ties toward the
/// smaller index.
#[inline]
pub(crate) fn rank_order(a: (f32, usize), b: (f32, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Keeps the `k` largest probabilities per pixel (descending) and their
/// disparity indices. Ties go to the smaller disparity index.
pub fn f2i_topk(p: &ProbabilityVolume, k: usize) -> Result<HypothesisSet> {
    let (nd, h, w) = (p.disparities, p.height, p.width);
    if k == 0 || k > nd {
        return Err(invalid(format!("top-K {k} outside 1..={nd}")));
    }
    let rows = par::map_indices(h, |y| {
        let mut d_row = vec![0u32; k * w];
        let mut a_row = vec![0.0f32; k * w];
        let mut order: Vec<(f32, usize)> = Vec::with_capacity(nd);
        for x in 0..w {
            order.clear();
            order.extend((0..nd).map(|d| (p.get(d, y, x), d)));
            if k < nd {
                order.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
                order.truncate(k);
            }
            order.sort_unstable_by(|a, b| rank_order(*a, *b));
            for (i, &(v, d)) in order.iter().enumerate() {
                d_row[i * w + x] = d as u32;
                a_row[i * w + x] = v;
            }
        }
        (d_row, a_row)
    });
    let mut d_hyp = vec![0u32; k * h * w];
    let mut a_f = vec![0.0f32; k * h * w];
    for (y, (d_row, a_row)) in rows.into_iter().enumerate() {
        for i in 0..k {
            let dst = (i * h + y) * w;
            d_hyp[dst..dst + w].copy_from_slice(&d_row[i * w..(i + 1) * w]);
            a_f[dst..dst + w].copy_from_slice(&a_row[i * w..(i + 1) * w]);
        }
    }
    Ok(HypothesisSet { k, height: h, width: w, d_hyp, a_f })
}

/// Concatenation volume over the per-pixel hypotheses only:
/// slice `k` holds `f_l(y, x)` and `f_r(y, x - d_hyp_k(y, x))`.
pub fn build_compact_concat(f_l: &FeatureMap, f_r: &FeatureMap, hyp: &HypothesisSet) -> Result<CostVolume> {
    if !f_l.same_shape(f_r) {
        return Err(shape_err("left and right feature maps differ in shape"));
    }
    if hyp.height != f_l.height || hyp.width != f_l.width {
        return Err(shape_err("hypotheses and features differ in size"));
    }
    let (c, h, w, k) = (f_l.channels, f_l.height, f_l.width, hyp.k);
    let mut data = vec![0.0f32; 2 * c * k * h * w];
    par::for_each_chunk(&mut data, (h * w).max(1), |idx, plane| {
        let ch = idx / k;
        let i = idx % k;
        if ch < c {
            plane.copy_from_slice(f_l.plane(ch));
            return;
        }
        let src = f_r.plane(ch - c);
        let hyps = &hyp.d_hyp[i * h * w..(i + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let d = hyps[y * w + x] as usize;
                if d <= x {
                    plane[y * w + x] = src[y * w + x - d];
                }
            }
        }
    });
    Ok(CostVolume { channels: 2 * c, disparities: k, height: h, width: w, data, scale: f_l.scale })
}

/// Multiplies every channel of the compact volume by the hypothesis
/// probabilities.
pub fn fast_attention_filter(hyp: &HypothesisSet, c_compact: &CostVolume) -> Result<CostVolume> {
    if hyp.k != c_compact.disparities || hyp.height != c_compact.height || hyp.width != c_compact.width {
        return Err(shape_err(format!(
            "hypotheses {}x{}x{} vs volume {}x{}x{}",
            hyp.k, hyp.height, hyp.width, c_compact.disparities, c_compact.height, c_compact.width
        )));
    }
    let mut out = c_compact.clone();
    par::for_each_chunk(&mut out.data, hyp.a_f.len().max(1), |_, chunk| {
        for (o, &a) in chunk.iter_mut().zip(&hyp.a_f) {
            *o *= a;
        }
    });
    Ok(out)
}

/// Takes the `top` largest aggregated values per pixel, softmaxes them and
/// returns the expected hypothesis disparity (same units as `d_hyp`).
pub fn predict_from_hypotheses(v: &CostVolume, hyp: &HypothesisSet, top: usize) -> Result<DisparityMap> {
    v.require_single_channel("predict_from_hypotheses")?;
    if v.disparities != hyp.k || v.height != hyp.height || v.width != hyp.width {
        return Err(shape_err("aggregated volume and hypotheses differ in shape"));
    }
    if top == 0 || top > hyp.k {
        return Err(invalid(format!("top {top} outside 1..={}", hyp.k)));
    }
    let (k, h, w) = (hyp.k, v.height, v.width);
    let mut data = vec![0.0f32; h * w];
    par::for_each_chunk(&mut data, w.max(1), |y, row| {
        let mut order: Vec<(f32, usize)> = Vec::with_capacity(k);
        let mut logits = vec![0.0f32; top];
        let mut probs = vec![0.0f64; top];
        for (x, out) in row.iter_mut().enumerate() {
            order.clear();
            order.extend((0..k).map(|i| (v.get(0, i, y, x), i)));
            order.sort_unstable_by(|a, b| rank_order(*a, *b));
            for (l, &(val, _)) in logits.iter_mut().zip(&order) {
                *l = val;
            }
            softmax_kernel(&logits, &mut probs);
            let mut acc = 0.0f64;
            for (p, &(_, i)) in probs.iter().zip(&order) {
                acc += p * hyp.disparity(i, y, x) as f64;
            }
            *out = acc as f32;
        }
    });
    Ok(DisparityMap { height: h, width: w, data, scale: v.scale })
}
