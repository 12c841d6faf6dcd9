//! Dense feature/volume containers and the elementary tensor operations the
//! ACV and Fast-ACV constructions are composed from.
//!
//! Layouts are row-major: feature maps are `(channel, row, col)` and cost
//! volumes are `(channel, disparity, row, col)`. Every per-pixel reduction
//! runs in ascending index order, whatever the parallel schedule.

use crate::error::{invalid, shape_err, Error, Result};
use crate::par;

/// Per-pixel feature vectors, `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub(crate) channels: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) scale: u32,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(format!(
                "feature data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self { channels, height, width, data, scale: 1 })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width], scale: 1 }
    }

    /// Builds a map from `f(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Sets the resolution denominator relative to the full image.
    pub fn with_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn scale(&self) -> u32 {
        self.scale
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// A 4D cost volume, `channels x disparities x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub(crate) channels: usize,
    pub(crate) disparities: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) scale: u32,
}

impl CostVolume {
    pub fn new(
        channels: usize,
        disparities: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != channels * disparities * height * width {
            return Err(shape_err(format!(
                "volume data has {} values, expected {}x{}x{}x{}",
                data.len(),
                channels,
                disparities,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost volume"));
        }
        Ok(Self { channels, disparities, height, width, data, scale: 1 })
    }

    pub fn zeros(channels: usize, disparities: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            disparities,
            height,
            width,
            data: vec![0.0; channels * disparities * height * width],
            scale: 1,
        }
    }

    /// Builds a volume from `f(channel, disparity, row, col)`.
    pub fn from_fn(
        channels: usize,
        disparities: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * disparities * height * width);
        for c in 0..channels {
            for d in 0..disparities {
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(c, d, y, x));
                    }
                }
            }
        }
        Self::new(channels, disparities, height, width, data)
    }

    pub fn with_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn disparities(&self) -> usize {
        self.disparities
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn scale(&self) -> u32 {
        self.scale
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of stored elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, d: usize, y: usize, x: usize) -> f32 {
        self.data[((c * self.disparities + d) * self.height + y) * self.width + x]
    }

    /// The `height x width` slice at `(channel, disparity)`.
    pub fn plane(&self, c: usize, d: usize) -> &[f32] {
        let n = self.height * self.width;
        let start = (c * self.disparities + d) * n;
        &self.data[start..start + n]
    }

    pub(crate) fn same_grid(&self, other: &CostVolume) -> bool {
        self.disparities == other.disparities
            && self.height == other.height
            && self.width == other.width
    }

    pub(crate) fn require_single_channel(&self, what: &str) -> Result<()> {
        if self.channels != 1 {
            return Err(shape_err(format!("{what} expects 1 channel, got {}", self.channels)));
        }
        Ok(())
    }
}

/// Per-pixel disparity distributions, `disparities x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub(crate) disparities: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) scale: u32,
}

/// Tolerance on per-pixel probability mass.
pub const NORMALIZATION_TOL: f64 = 1e-5;

impl ProbabilityVolume {
    /// Validates non-negativity and per-pixel normalization.
    pub fn new(disparities: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != disparities * height * width {
            return Err(shape_err("probability data length"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let p = Self { disparities, height, width, data, scale: 1 };
        for y in 0..height {
            for x in 0..width {
                let s: f64 = (0..disparities).map(|d| p.get(d, y, x) as f64).sum();
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(invalid(format!("pixel ({y}, {x}) sums to {s}")));
                }
            }
        }
        Ok(p)
    }

    pub fn with_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    pub fn disparities(&self) -> usize {
        self.disparities
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn scale(&self) -> u32 {
        self.scale
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, d: usize, y: usize, x: usize) -> f32 {
        self.data[(d * self.height + y) * self.width + x]
    }

    /// The distribution at one pixel, in disparity order.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.disparities).map(|d| self.get(d, y, x)).collect()
    }
}

/// Real-valued disparities in pixels at `scale` (1 = full resolution).
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
    pub(crate) scale: u32,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(format!(
                "disparity data has {} values, expected {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { height, width, data, scale: 1 })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width], scale: 1 }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data, scale: 1 }
    }

    pub fn with_scale(mut self, scale: u32) -> Self {
        self.scale = scale;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn scale(&self) -> u32 {
        self.scale
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub(crate) fn same_shape(&self, other: &DisparityMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Multiplies every disparity by `factor` and divides the scale
    /// denominator accordingly.
    pub fn rescaled(&self, factor: u32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * factor as f32).collect(),
            scale: (self.scale / factor).max(1),
        }
    }

    /// Median over all pixels.
    pub fn median(&self) -> f32 {
        let mut v = self.data.clone();
        v.sort_by(f32::total_cmp);
        if v.is_empty() {
            return 0.0;
        }
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// A plain `height x width` map of reals (uncertainty, confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ScalarField {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Cross-neighborhood offsets `(dy, dx)`: center, up, down, left, right.
pub const CROSS_OFFSETS: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
/// Names of the cross channels, in [`CROSS_OFFSETS`] order.
pub const CROSS_NAMES: [&str; 5] = ["center", "up", "down", "left", "right"];
/// Number of cross-neighborhood samples.
pub const CROSS_SIZE: usize = 5;

#[inline]
pub(crate) fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Accumulator for fixed-order reductions: `f32` for short sums, `f64` for
/// reductions longer than [`LONG_REDUCTION`] terms.
pub(crate) trait Accum: Copy + Default + std::ops::AddAssign + std::ops::Mul<Output = Self> {
    fn of(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Accum for f32 {
    #[inline]
    fn of(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Accum for f64 {
    #[inline]
    fn of(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}

pub(crate) const LONG_REDUCTION: usize = 256;

/// Runs `row_fn(y)` for every image row in parallel; each call returns a
/// `disparities x width` buffer that is scattered into a
/// `disparities x height x width` array.
pub(crate) fn per_pixel_rows<T, F>(disparities: usize, height: usize, width: usize, row_fn: F) -> Vec<T>
where
    T: Copy + Default + Send,
    F: Fn(usize) -> Vec<T> + Sync + Send,
{
    let rows = par::map_indices(height, row_fn);
    let mut out = vec![T::default(); disparities * height * width];
    for (y, row) in rows.into_iter().enumerate() {
        for d in 0..disparities {
            let dst = (d * height + y) * width;
            out[dst..dst + width].copy_from_slice(&row[d * width..(d + 1) * width]);
        }
    }
    out
}

/// Softmax along the disparity axis of a single-channel volume.
///
/// The per-pixel maximum is subtracted before exponentiation; sums are
/// accumulated in `f64`.
pub fn softmax_over_disparity(v: &CostVolume) -> Result<ProbabilityVolume> {
    v.require_single_channel("softmax_over_disparity")?;
    if v.data.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFiniteCost);
    }
    let (nd, h, w) = (v.disparities, v.height, v.width);
    let data = per_pixel_rows(nd, h, w, |y| {
        let mut row = vec![0.0f32; nd * w];
        let mut logits = vec![0.0f32; nd];
        let mut probs = vec![0.0f64; nd];
        for x in 0..w {
            for (d, l) in logits.iter_mut().enumerate() {
                *l = v.get(0, d, y, x);
            }
            softmax_kernel(&logits, &mut probs);
            for (d, p) in probs.iter().enumerate() {
                row[d * w + x] = *p as f32;
            }
        }
        row
    });
    Ok(ProbabilityVolume { disparities: nd, height: h, width: w, data, scale: v.scale })
}

/// Max-stabilized softmax of one pixel's logits, evaluated in `f64`.
pub(crate) fn softmax_kernel(logits: &[f32], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64));
    let mut sum = 0.0f64;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l as f64 - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Expected disparity index under each pixel's distribution.
pub fn soft_argmin(p: &ProbabilityVolume) -> DisparityMap {
    let (nd, h, w) = (p.disparities, p.height, p.width);
    let mut data = vec![0.0f32; h * w];
    par::for_each_chunk(&mut data, w.max(1), |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for d in 0..nd {
                acc += d as f64 * p.get(d, y, x) as f64;
            }
            *out = acc as f32;
        }
    });
    DisparityMap { height: h, width: w, data, scale: p.scale }
}

/// Group-wise correlation volume.
///
/// `out(g, d, y, x) = (n_groups / channels) * <f_l^g(y, x), f_r^g(y, x - d)>`
/// with `f^g` the g-th contiguous block of channels. Positions with
/// `x - d < 0` are zero.
pub fn group_correlation(
    f_l: &FeatureMap,
    f_r: &FeatureMap,
    disparities: usize,
    n_groups: usize,
) -> Result<CostVolume> {
    if !f_l.same_shape(f_r) {
        return Err(shape_err("left and right feature maps differ in shape"));
    }
    if n_groups == 0 || f_l.channels % n_groups != 0 {
        return Err(invalid(format!(
            "{} groups do not divide {} channels",
            n_groups, f_l.channels
        )));
    }
    let (h, w) = (f_l.height, f_l.width);
    let cpg = f_l.channels / n_groups;
    let scale = n_groups as f32 / f_l.channels as f32;
    let mut data = vec![0.0f32; n_groups * disparities * h * w];
    par::for_each_chunk(&mut data, h * w, |idx, plane| {
        let g = idx / disparities;
        let d = idx % disparities;
        let channels = g * cpg..(g + 1) * cpg;
        if cpg > LONG_REDUCTION {
            correlation_plane::<f64>(f_l, f_r, channels, d, scale, plane);
        } else {
            correlation_plane::<f32>(f_l, f_r, channels, d, scale, plane);
        }
    });
    Ok(CostVolume { channels: n_groups, disparities, height: h, width: w, data, scale: f_l.scale })
}

fn correlation_plane<A: Accum>(
    f_l: &FeatureMap,
    f_r: &FeatureMap,
    channels: std::ops::Range<usize>,
    d: usize,
    scale: f32,
    plane: &mut [f32],
) {
    let (h, w) = (f_l.height, f_l.width);
    if d >= w {
        return;
    }
    let mut acc = vec![A::default(); w];
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = A::default());
        for c in channels.clone() {
            let base = (c * h + y) * w;
            let l = &f_l.data[base..base + w];
            let r = &f_r.data[base..base + w];
            for x in d..w {
                acc[x] += A::of(l[x]) * A::of(r[x - d]);
            }
        }
        let row = &mut plane[y * w..(y + 1) * w];
        for x in d..w {
            row[x] = acc[x].to_f32() * scale;
        }
    }
}

/// Concatenation volume: channels `0..C` hold `f_l(y, x)`, channels `C..2C`
/// hold `f_r(y, x - d)` (zero when `x - d < 0`).
pub fn build_concat_volume(f_l: &FeatureMap, f_r: &FeatureMap, disparities: usize) -> Result<CostVolume> {
    if !f_l.same_shape(f_r) {
        return Err(shape_err("left and right feature maps differ in shape"));
    }
    let (c, h, w) = (f_l.channels, f_l.height, f_l.width);
    let mut data = vec![0.0f32; 2 * c * disparities * h * w];
    par::for_each_chunk(&mut data, h * w, |idx, plane| {
        let ch = idx / disparities;
        let d = idx % disparities;
        if ch < c {
            plane.copy_from_slice(f_l.plane(ch));
        } else {
            let src = f_r.plane(ch - c);
            if d < w {
                for y in 0..h {
                    plane[y * w + d..(y + 1) * w].copy_from_slice(&src[y * w..y * w + w - d]);
                }
            }
        }
    });
    Ok(CostVolume { channels: 2 * c, disparities, height: h, width: w, data, scale: f_l.scale })
}

#[inline]
fn lerp_coords(o: usize, factor: usize, n: usize) -> (usize, usize, f32) {
    let pos = o as f64 / factor as f64;
    let i0 = pos.floor() as usize;
    if i0 + 1 >= n {
        (n - 1, n - 1, 0.0)
    } else {
        (i0, i0 + 1, (pos - i0 as f64) as f32)
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Trilinear upsampling along disparity, height and width by `factor`.
///
/// Output index `o` samples the input at `o / factor`; samples beyond the
/// last input index replicate it. `factor == 1` returns an exact copy.
pub fn upsample_volume_trilinear(v: &CostVolume, factor: usize) -> Result<CostVolume> {
    if factor == 0 {
        return Err(invalid("upsampling factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let (nd, h, w) = (v.disparities, v.height, v.width);
    let (od, oh, ow) = (nd * factor, h * factor, w * factor);
    let xs: Vec<_> = (0..ow).map(|o| lerp_coords(o, factor, w)).collect();
    let ys: Vec<_> = (0..oh).map(|o| lerp_coords(o, factor, h)).collect();
    let mut data = vec![0.0f32; v.channels * od * oh * ow];
    par::for_each_chunk(&mut data, oh * ow, |idx, plane| {
        let c = idx / od;
        let (d0, d1, td) = lerp_coords(idx % od, factor, nd);
        let p0 = v.plane(c, d0);
        let p1 = v.plane(c, d1);
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let s = |p: &[f32]| {
                    lerp(lerp(p[y0 * w + x0], p[y0 * w + x1], tx), lerp(p[y1 * w + x0], p[y1 * w + x1], tx), ty)
                };
                plane[oy * ow + ox] = lerp(s(p0), s(p1), td);
            }
        }
    });
    Ok(CostVolume {
        channels: v.channels,
        disparities: od,
        height: oh,
        width: ow,
        data,
        scale: (v.scale / factor as u32).max(1),
    })
}

/// Unfolds a single-channel volume over the cross neighborhood.
///
/// Channel `m` holds the input shifted by `radius * CROSS_OFFSETS[m]`,
/// with edge replication at the borders.
pub fn unfold_cross(v: &CostVolume, radius: usize) -> Result<CostVolume> {
    v.require_single_channel("unfold_cross")?;
    if radius == 0 {
        return Err(invalid("cross radius must be >= 1"));
    }
    let (nd, h, w) = (v.disparities, v.height, v.width);
    let r = radius as isize;
    let mut data = vec![0.0f32; CROSS_SIZE * nd * h * w];
    par::for_each_chunk(&mut data, h * w, |idx, plane| {
        let (dy, dx) = CROSS_OFFSETS[idx / nd];
        let src = v.plane(0, idx % nd);
        for y in 0..h {
            let sy = clamp_index(y as isize + dy * r, h);
            for x in 0..w {
                let sx = clamp_index(x as isize + dx * r, w);
                plane[y * w + x] = src[sy * w + sx];
            }
        }
    });
    Ok(CostVolume { channels: CROSS_SIZE, disparities: nd, height: h, width: w, data, scale: v.scale })
}

/// Arithmetic mean over channels, giving a single-channel volume.
pub fn channel_mean(v: &CostVolume) -> CostVolume {
    let n = v.disparities * v.height * v.width;
    let inv = 1.0 / v.channels as f64;
    let mut data = vec![0.0f32; n];
    let chunk = (v.height * v.width).max(1);
    par::for_each_chunk(&mut data, chunk, |i, out| {
        let base = i * chunk;
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for c in 0..v.channels {
                acc += v.data[c * n + base + j] as f64;
            }
            *o = (acc * inv) as f32;
        }
    });
    CostVolume { channels: 1, disparities: v.disparities, height: v.height, width: v.width, data, scale: v.scale }
}

/// Multiplies every element by `s`.
pub fn scale_volume(v: &CostVolume, s: f32) -> CostVolume {
    let mut out = v.clone();
    par::for_each_chunk(&mut out.data, (v.height * v.width).max(1), |_, c| {
        c.iter_mut().for_each(|x| *x *= s)
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::rng::SeededRng;

    fn vol1(values: &[f32]) -> CostVolume {
        CostVolume::new(1, values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let p = softmax_over_disparity(&vol1(&[3.0; 4])).unwrap();
        assert_eq!(p.pixel(0, 0), vec![0.25; 4]);
    }

    #[test]
    fn softmax_ln2_closed_form() {
        let p = softmax_over_disparity(&vol1(&[0.0, std::f32::consts::LN_2])).unwrap();
        assert!((p.get(0, 0, 0) - 1.0 / 3.0).abs() < 1e-7);
        assert!((p.get(1, 0, 0) - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn softmax_matches_scalar_oracle() {
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let logits: Vec<f32> = (0..5).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let want = reference::softmax(&logits);
            let mut got = vec![0.0; 5];
            softmax_kernel(&logits, &mut got);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12);
            }
            // stored probabilities are the kernel output rounded to f32
            let p = softmax_over_disparity(&vol1(&logits)).unwrap();
            for (s, g) in p.pixel(0, 0).iter().zip(&got) {
                assert_eq!(*s, *g as f32);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let v = CostVolume { channels: 1, disparities: 2, height: 1, width: 1, data: vec![0.0, f32::NAN], scale: 1 };
        assert!(matches!(softmax_over_disparity(&v), Err(Error::NonFiniteCost)));
    }

    #[test]
    fn soft_argmin_examples() {
        let mut onehot = vec![0.0; 8];
        onehot[2] = 1.0;
        let p = ProbabilityVolume::new(8, 1, 1, onehot).unwrap();
        assert_eq!(soft_argmin(&p).get(0, 0), 2.0);
        let p = ProbabilityVolume::new(4, 1, 1, vec![0.25; 4]).unwrap();
        assert_eq!(soft_argmin(&p).get(0, 0), 1.5);
        let p = ProbabilityVolume::new(4, 1, 1, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(soft_argmin(&p).get(0, 0), 1.5);
    }

    #[test]
    fn correlation_of_ones_is_one() {
        let f = FeatureMap::from_fn(16, 3, 4, |_, _, _| 1.0).unwrap();
        let v = group_correlation(&f, &f, 2, 2).unwrap();
        assert_eq!(v.get(1, 0, 1, 2), 1.0);
        assert_eq!(v.get(0, 1, 1, 0), 0.0);
    }

    #[test]
    fn correlation_orthogonal_is_zero() {
        let l = FeatureMap::from_fn(2, 1, 1, |c, _, _| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        let r = FeatureMap::from_fn(2, 1, 1, |c, _, _| if c == 1 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(group_correlation(&l, &r, 1, 1).unwrap().get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn correlation_matches_loop_oracle_exactly() {
        let mut rng = SeededRng::new(5);
        let l = rng.feature_map(4, 6, 12);
        let r = rng.feature_map(4, 6, 12);
        let got = group_correlation(&l, &r, 5, 2).unwrap();
        assert_eq!(got, reference::group_correlation(&l, &r, 5, 2));
    }

    #[test]
    fn correlation_rejects_bad_groups() {
        let f = FeatureMap::zeros(6, 2, 2);
        assert!(group_correlation(&f, &f, 2, 4).is_err());
    }

    #[test]
    fn concat_layout() {
        let mut rng = SeededRng::new(9);
        let l = rng.feature_map(3, 4, 6);
        let r = rng.feature_map(3, 4, 6);
        let v = build_concat_volume(&l, &r, 4).unwrap();
        assert_eq!((v.channels(), v.disparities()), (6, 4));
        for c in 0..3 {
            assert_eq!(v.plane(c, 0), l.plane(c));
            assert_eq!(v.plane(c + 3, 0), r.plane(c));
            // x = 1 < d = 3: right half is out of frame
            assert_eq!(v.get(c + 3, 3, 2, 1), 0.0);
            assert_eq!(v.get(c + 3, 3, 2, 5), r.get(c, 2, 2));
        }
        let big = build_concat_volume(&FeatureMap::zeros(32, 2, 3), &FeatureMap::zeros(32, 2, 3), 48).unwrap();
        assert_eq!((big.channels(), big.disparities(), big.height(), big.width()), (64, 48, 2, 3));
    }

    #[test]
    fn upsample_identity_and_constant() {
        let mut rng = SeededRng::new(3);
        let v = rng.volume(2, 3, 4, 5);
        assert_eq!(upsample_volume_trilinear(&v, 1).unwrap(), v);
        let c = CostVolume::from_fn(1, 3, 4, 5, |_, _, _, _| 0.7).unwrap();
        let u = upsample_volume_trilinear(&c, 2).unwrap();
        assert_eq!((u.disparities(), u.height(), u.width()), (6, 8, 10));
        assert!(u.data().iter().all(|&x| x == 0.7));
        assert!(upsample_volume_trilinear(&c, 0).is_err());
    }

    #[test]
    fn upsample_ramp_hits_midpoints() {
        let n = 6;
        let v = CostVolume::from_fn(1, n, 3, 3, |_, d, _, _| 2.0 * d as f32 + 1.0).unwrap();
        let u = upsample_volume_trilinear(&v, 2).unwrap();
        for i in 0..n - 1 {
            // analytic: value at d = i + 0.5 on the ramp 2d + 1
            let want = 2.0 * (i as f64 + 0.5) + 1.0;
            assert!((u.get(0, 2 * i + 1, 2, 3) as f64 - want).abs() < 1e-6);
            assert_eq!(u.get(0, 2 * i, 1, 1), 2.0 * i as f32 + 1.0);
        }
    }

    #[test]
    fn unfold_cross_basics() {
        let c = CostVolume::from_fn(1, 2, 3, 3, |_, _, _, _| 4.0).unwrap();
        let u = unfold_cross(&c, 1).unwrap();
        assert!(u.data().iter().all(|&x| x == 4.0));

        let mut rng = SeededRng::new(1);
        let v = rng.volume(1, 3, 5, 6);
        let u = unfold_cross(&v, 1).unwrap();
        for d in 0..3 {
            assert_eq!(u.plane(0, d), v.plane(0, d));
        }
        // left channel at an interior pixel
        assert_eq!(u.get(3, 1, 2, 3), v.get(0, 1, 2, 2));
        assert_eq!(u, reference::unfold_cross(&v, 1));
    }

    #[test]
    fn unfold_cross_mirror_swaps_left_right() {
        let mut rng = SeededRng::new(2);
        let v = rng.volume(1, 2, 4, 7);
        let mirror = |v: &CostVolume| {
            CostVolume::from_fn(v.channels(), v.disparities(), v.height(), v.width(), |c, d, y, x| {
                v.get(c, d, y, v.width() - 1 - x)
            })
            .unwrap()
        };
        let a = mirror(&unfold_cross(&v, 2).unwrap());
        let b = unfold_cross(&mirror(&v), 2).unwrap();
        for d in 0..2 {
            assert_eq!(a.plane(3, d), b.plane(4, d));
            assert_eq!(a.plane(4, d), b.plane(3, d));
            assert_eq!(a.plane(1, d), b.plane(1, d));
        }
    }

    #[test]
    fn channel_mean_of_two() {
        let v = CostVolume::from_fn(2, 1, 1, 2, |c, _, _, _| if c == 0 { 1.0 } else { 4.0 }).unwrap();
        assert_eq!(channel_mean(&v).data(), &[2.5, 2.5]);
    }
}
