//! Deterministic feature extraction standing in for the learned backbone.

use crate::error::{invalid, shape_err, Result};
use crate::io::GrayImage;
use crate::par;
use crate::volume::{clamp_index, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureBackend {
    /// Signs of neighbor-minus-center differences.
    #[default]
    Census,
    /// Neighbor-minus-center differences, L2-normalized per pixel.
    Gradient,
}

impl std::str::FromStr for FeatureBackend {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "census" => Ok(Self::Census),
            "gradient" => Ok(Self::Gradient),
            _ => Err(format!("unknown feature backend '{s}' (census|gradient)")),
        }
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(invalid(format!("window {window} must be odd and at least 3")));
    }
    Ok(())
}

/// Neighbor offsets of a `window x window` block in raster order, center excluded.
fn neighbors(window: usize) -> Vec<(isize, isize)> {
    let r = (window / 2) as isize;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).filter(|&o| o != (0, 0)).collect()
}

/// Per-channel `I(neighbor) - I(center)` with replicated borders, `f(diff)` applied.
fn neighbor_differences(image: &GrayImage, window: usize, f: impl Fn(f32) -> f32 + Sync + Send) -> FeatureMap {
    let (h, w) = (image.height, image.width);
    let offs = neighbors(window);
    let mut data = vec![0.0f32; offs.len() * h * w];
    par::for_each_chunk(&mut data, (h * w).max(1), |b, plane| {
        let (dy, dx) = offs[b];
        for y in 0..h {
            let ny = clamp_index(y as isize + dy, h);
            for x in 0..w {
                let nx = clamp_index(x as isize + dx, w);
                plane[y * w + x] = f(image.data[ny * w + nx] - image.data[y * w + x]);
            }
        }
    });
    FeatureMap { channels: offs.len(), height: h, width: w, data, scale: 1 }
}

/// Census transform: `window^2 - 1` channels of `sign(I(neighbor) - I(center))`
/// as `-1, 0, +1`, borders replicated.
pub fn census_features(image: &GrayImage, window: usize) -> Result<FeatureMap> {
    check_window(window)?;
    Ok(neighbor_differences(image, window, |d| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    }))
}

/// Neighbor differences rescaled per pixel to norm `sqrt(C)`, so that the
/// mean channel product lies in `[-1, 1]` like census features. Flat
/// neighborhoods give zero vectors.
pub fn gradient_features(image: &GrayImage, window: usize) -> Result<FeatureMap> {
    check_window(window)?;
    let mut f = neighbor_differences(image, window, |d| d);
    let (c, hw) = (f.channels, f.height * f.width);
    let mut norms = vec![0.0f64; hw];
    for ch in 0..c {
        for (n, v) in norms.iter_mut().zip(&f.data[ch * hw..(ch + 1) * hw]) {
            *n += *v as f64 * *v as f64;
        }
    }
    let target = (c as f64).sqrt();
    let factors: Vec<f32> =
        norms.iter().map(|n| if *n > 1e-20 { (target / n.sqrt()) as f32 } else { 0.0 }).collect();
    par::for_each_chunk(&mut f.data, hw.max(1), |_, plane| {
        for (v, s) in plane.iter_mut().zip(&factors) {
            *v *= s;
        }
    });
    Ok(f)
}

pub fn extract(image: &GrayImage, window: usize, backend: FeatureBackend) -> Result<FeatureMap> {
    match backend {
        FeatureBackend::Census => census_features(image, window),
        FeatureBackend::Gradient => gradient_features(image, window),
    }
}

/// Block-mean downsampling by `factor`. Partial blocks at the right and
/// bottom edges average the pixels they contain.
pub fn box_downsample(image: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 {
        return Err(invalid("downsample factor must be >= 1"));
    }
    let (h, w) = (image.height, image.width);
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut data = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for y in oy * factor..((oy + 1) * factor).min(h) {
                for x in ox * factor..((ox + 1) * factor).min(w) {
                    sum += image.data[y * w + x] as f64;
                    n += 1;
                }
            }
            data.push((sum / n as f64) as f32);
        }
    }
    GrayImage::new(oh, ow, data)
}

/// Bilinear upsampling by `factor` onto an `out_h x out_w` grid with
/// pixel-center alignment: output `o` samples input `(o + 0.5) / factor - 0.5`,
/// clamped to the input extent.
pub fn upsample_features(f: &FeatureMap, factor: usize, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(invalid("upsample factor must be >= 1"));
    }
    let taps = |o: usize, n: usize| -> (usize, usize, f32) {
        let pos = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        (i0, (i0 + 1).min(n - 1), (pos - i0 as f64) as f32)
    };
    let (h, w) = (f.height, f.width);
    let ys: Vec<_> = (0..out_h).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| taps(o, w)).collect();
    let mut data = vec![0.0f32; f.channels * out_h * out_w];
    par::for_each_chunk(&mut data, (out_h * out_w).max(1), |c, plane| {
        let src = f.plane(c);
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                plane[oy * out_w + ox] = top * (1.0 - ty) + bot * ty;
            }
        }
    });
    Ok(FeatureMap { channels: f.channels, height: out_h, width: out_w, data, scale: f.scale / factor as u32 })
}

/// Repeats channels cyclically (or truncates) to exactly `channels`.
pub fn fit_channels(f: &FeatureMap, channels: usize) -> Result<FeatureMap> {
    if channels == 0 || f.channels == 0 {
        return Err(invalid("cannot fit to or from zero channels"));
    }
    let hw = f.height * f.width;
    let mut data = Vec::with_capacity(channels * hw);
    for c in 0..channels {
        data.extend_from_slice(f.plane(c % f.channels));
    }
    Ok(FeatureMap { channels, data, ..f.clone() })
}

/// Smallest multiple of `groups` that is at least `native`.
pub(crate) fn group_multiple(native: usize, groups: usize) -> usize {
    groups * native.div_ceil(groups)
}

/// Shifts every pixel's feature vector to unit channel mean: `f - mean_c(f) + 1`.
pub fn unit_mean(f: &FeatureMap) -> FeatureMap {
    let (c, hw) = (f.channels, f.height * f.width);
    let mut mean = vec![0.0f64; hw];
    for ch in 0..c {
        for (m, v) in mean.iter_mut().zip(f.plane(ch)) {
            *m += *v as f64;
        }
    }
    let shift: Vec<f32> = mean.iter().map(|m| (1.0 - m / c as f64) as f32).collect();
    let mut out = f.clone();
    par::for_each_chunk(&mut out.data, hw.max(1), |_, plane| {
        for (v, s) in plane.iter_mut().zip(&shift) {
            *v += s;
        }
    });
    out
}

/// Features of one image at every resolution the pipelines consume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    /// Native features of the 1/4-resolution image.
    pub quarter: FeatureMap,
    /// Native features of the 1/8-resolution image.
    pub eighth: FeatureMap,
    /// Pseudo-levels l1, l2, l3 at 1/4 resolution, channel counts fitted to
    /// the group split.
    pub levels: [FeatureMap; 3],
}

/// Window sizes per source resolution (1/4, 1/8, 1/16).
pub const PYRAMID_WINDOWS: [usize; 3] = [5, 7, 7];

/// Builds the pyramid from a full-resolution image.
///
/// l1 is computed on the 4x box-downsampled image; l2 and l3 on the 8x and
/// 16x downsampled images and brought back to 1/4 resolution bilinearly.
/// Every level is tiled to `group_split[i] * per_group` channels with
/// `per_group` taken from l1.
pub fn build_feature_pyramid(
    image: &GrayImage,
    backend: FeatureBackend,
    group_split: [usize; 3],
) -> Result<FeaturePyramid> {
    let (h, w) = (image.height, image.width);
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(shape_err(format!("image {h}x{w}: dimensions must be positive multiples of 8")));
    }
    if group_split.contains(&0) {
        return Err(invalid("group split entries must be positive"));
    }
    let (qh, qw) = (h / 4, w / 4);
    let img4 = box_downsample(image, 4)?;
    let img8 = box_downsample(&img4, 2)?;
    let img16 = box_downsample(&img4, 4)?;

    let quarter = extract(&img4, PYRAMID_WINDOWS[0], backend)?.with_scale(4);
    let eighth = extract(&img8, PYRAMID_WINDOWS[1], backend)?.with_scale(8);
    let sixteenth = extract(&img16, PYRAMID_WINDOWS[2], backend)?.with_scale(16);

    let native = [quarter.channels, eighth.channels, sixteenth.channels];
    let per_group = (0..3).map(|i| native[i].div_ceil(group_split[i])).max().unwrap_or(1);

    let l1 = fit_channels(&quarter, group_split[0] * per_group)?;
    let l2 = fit_channels(&upsample_features(&eighth, 2, qh, qw)?, group_split[1] * per_group)?;
    let l3 = fit_channels(&upsample_features(&sixteenth, 4, qh, qw)?, group_split[2] * per_group)?;
    Ok(FeaturePyramid { quarter, eighth, levels: [l1, l2, l3] })
}
