//! Naive reference implementations.
//!
//! Straight nested loops over the defining formulas, with no shared
//! kernels, used by the test suites and the `selftest` command to check the
//! optimized operations.

use crate::acv::PatchWeights;
use crate::fast_acv::{CrossField, HypothesisSet};
use crate::volume::{CostVolume, FeatureMap, CROSS_OFFSETS};

/// Textbook softmax in `f64`, no max subtraction.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// `sum_d d * p[d]`.
pub fn expectation(p: &[f32]) -> f64 {
    p.iter().enumerate().map(|(d, &v)| d as f64 * v as f64).sum()
}

/// `sum_d p[d] * (d - mean)^2`.
pub fn variance(p: &[f32], mean: f64) -> f64 {
    p.iter().enumerate().map(|(d, &v)| v as f64 * (d as f64 - mean).powi(2)).sum()
}

pub fn group_correlation(f_l: &FeatureMap, f_r: &FeatureMap, disparities: usize, n_groups: usize) -> CostVolume {
    let (c, h, w) = (f_l.channels(), f_l.height(), f_l.width());
    let cpg = c / n_groups;
    let scale = n_groups as f32 / c as f32;
    CostVolume::from_fn(n_groups, disparities, h, w, |g, d, y, x| {
        if x < d {
            return 0.0;
        }
        let mut sum = 0.0f32;
        for k in 0..cpg {
            let ch = g * cpg + k;
            sum += f_l.get(ch, y, x) * f_r.get(ch, y, x - d);
        }
        sum * scale
    })
    .expect("finite")
}

/// Nine-tap patch matching evaluated directly from the features.
pub fn mapm_level(
    f_l: &FeatureMap,
    f_r: &FeatureMap,
    weights: &PatchWeights,
    disparities: usize,
    n_groups: usize,
) -> CostVolume {
    let (c, h, w) = (f_l.channels(), f_l.height() as isize, f_l.width() as isize);
    let cpg = c / n_groups;
    let k = weights.level() as isize;
    CostVolume::from_fn(n_groups, disparities, h as usize, w as usize, |g, d, y, x| {
        let mut total = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let j = (a as isize - 1) * k;
                let i = (b as isize - 1) * k;
                let (ly, lx) = (y as isize - j, x as isize - i);
                let rx = lx - d as isize;
                if ly < 0 || ly >= h || lx < 0 || lx >= w || rx < 0 {
                    continue;
                }
                let mut dot = 0.0f64;
                for ch in g * cpg..(g + 1) * cpg {
                    dot += f_l.get(ch, ly as usize, lx as usize) as f64
                        * f_r.get(ch, ly as usize, rx as usize) as f64;
                }
                total += weights.weights()[a * 3 + b] as f64 * dot;
            }
        }
        (total / cpg as f64) as f32
    })
    .expect("finite")
}

pub fn concat_volume(f_l: &FeatureMap, f_r: &FeatureMap, disparities: usize) -> CostVolume {
    let c = f_l.channels();
    CostVolume::from_fn(2 * c, disparities, f_l.height(), f_l.width(), |ch, d, y, x| {
        if ch < c {
            f_l.get(ch, y, x)
        } else if x >= d {
            f_r.get(ch - c, y, x - d)
        } else {
            0.0
        }
    })
    .expect("finite")
}

pub fn unfold_cross(v: &CostVolume, radius: usize) -> CostVolume {
    let (h, w) = (v.height() as isize, v.width() as isize);
    let r = radius as isize;
    CostVolume::from_fn(5, v.disparities(), v.height(), v.width(), |m, d, y, x| {
        let (dy, dx) = CROSS_OFFSETS[m];
        let sy = (y as isize + dy * r).max(0).min(h - 1) as usize;
        let sx = (x as isize + dx * r).max(0).min(w - 1) as usize;
        v.get(0, d, sy, sx)
    })
    .expect("finite")
}

pub fn sample_cross(values: &[f32], height: usize, width: usize, radius: usize) -> CrossField {
    let r = radius as isize;
    let mut data = Vec::new();
    for (dy, dx) in CROSS_OFFSETS {
        for y in 0..height {
            for x in 0..width {
                let sy = (y as isize + dy * r).max(0).min(height as isize - 1) as usize;
                let sx = (x as isize + dx * r).max(0).min(width as isize - 1) as usize;
                data.push(values[sy * width + sx]);
            }
        }
    }
    CrossField { height, width, data }
}

/// Dense `(2r+1)^3` mean filter with edge replication.
pub fn box3d(v: &CostVolume, radius: usize) -> CostVolume {
    let r = radius as isize;
    let (nd, h, w) = (v.disparities() as isize, v.height() as isize, v.width() as isize);
    let taps = ((2 * r + 1) as f64).powi(3);
    CostVolume::from_fn(v.channels(), v.disparities(), v.height(), v.width(), |c, d, y, x| {
        let mut sum = 0.0f64;
        for dd in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let sd = (d as isize + dd).clamp(0, nd - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                    let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                    sum += v.get(c, sd, sy, sx) as f64;
                }
            }
        }
        (sum / taps) as f32
    })
    .expect("finite")
}

pub fn attention_filter(a: &CostVolume, c: &CostVolume) -> CostVolume {
    CostVolume::from_fn(c.channels(), c.disparities(), c.height(), c.width(), |ch, d, y, x| {
        a.get(0, d, y, x) * c.get(ch, d, y, x)
    })
    .expect("finite")
}

/// Full sort by `(probability desc, index asc)`, truncated to `k`.
pub fn topk(p: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, p[i])).collect()
}

pub fn compact_concat(f_l: &FeatureMap, f_r: &FeatureMap, hyp: &HypothesisSet) -> CostVolume {
    let c = f_l.channels();
    CostVolume::from_fn(2 * c, hyp.k(), f_l.height(), f_l.width(), |ch, k, y, x| {
        if ch < c {
            return f_l.get(ch, y, x);
        }
        let d = hyp.disparity(k, y, x) as usize;
        if x >= d {
            f_r.get(ch - c, y, x - d)
        } else {
            0.0
        }
    })
    .expect("finite")
}

pub fn fast_attention_filter(hyp: &HypothesisSet, c: &CostVolume) -> CostVolume {
    CostVolume::from_fn(c.channels(), c.disparities(), c.height(), c.width(), |ch, k, y, x| {
        hyp.weight(k, y, x) * c.get(ch, k, y, x)
    })
    .expect("finite")
}

/// Convex combination of unfolded planes under softmax of the weights.
pub fn cross_propagate(v_u: &CostVolume, w: &CrossField) -> CostVolume {
    CostVolume::from_fn(1, v_u.disparities(), v_u.height(), v_u.width(), |_, d, y, x| {
        let logits: Vec<f32> = (0..5).map(|m| w.get(m, y, x)).collect();
        let sm = softmax(&logits);
        (0..5).map(|m| v_u.get(m, d, y, x) as f64 * sm[m]).sum::<f64>() as f32
    })
    .expect("finite")
}

pub fn matching_score(f_l: &FeatureMap, f_r: &FeatureMap, d_m: &CrossField) -> CrossField {
    let (c, h, w) = (f_l.channels(), f_l.height(), f_l.width());
    let mut data = Vec::new();
    for m in 0..5 {
        for y in 0..h {
            for x in 0..w {
                let pos = x as f64 - d_m.get(m, y, x) as f64;
                if pos < 0.0 || pos > (w - 1) as f64 {
                    data.push(0.0);
                    continue;
                }
                let x0 = pos.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let t = pos - x0 as f64;
                let mut s = 0.0f64;
                for ch in 0..c {
                    let r = (1.0 - t) * f_r.get(ch, y, x0) as f64 + t * f_r.get(ch, y, x1) as f64;
                    s += f_l.get(ch, y, x) as f64 * r;
                }
                data.push((s / c as f64) as f32);
            }
        }
    }
    CrossField { height: h, width: w, data }
}

/// Softmax expectation over the `top` largest values of one pixel.
pub fn top_prediction(values: &[f32], hyps: &[u32], top: usize) -> f64 {
    let chosen = topk(values, top);
    let logits: Vec<f32> = chosen.iter().map(|&(_, v)| v).collect();
    let sm = softmax(&logits);
    chosen.iter().zip(&sm).map(|(&(i, _), p)| p * hyps[i] as f64).sum()
}

/// Census signature by direct comparison, border replicated.
pub fn census(pixels: &[f32], height: usize, width: usize, window: usize) -> Vec<f32> {
    let r = (window / 2) as isize;
    let mut channels = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy == 0 && dx == 0 {
                continue;
            }
            for y in 0..height {
                for x in 0..width {
                    let ny = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                    let nx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                    let diff = pixels[ny * width + nx] - pixels[y * width + x];
                    channels.push(if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    });
                }
            }
        }
    }
    channels
}

/// Smooth-L1 of one residual, breakpoint 1.
pub fn smooth_l1(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

/// Trilinear upsampling as an explicit eight-corner weighted sum in `f64`;
/// output `o` samples input `o / factor`, clamped to the last index.
pub fn trilinear(v: &CostVolume, factor: usize) -> CostVolume {
    let coords = |o: usize, n: usize| -> (usize, usize, f64) {
        let pos = (o as f64 / factor as f64).min((n - 1) as f64);
        let i0 = pos.floor() as usize;
        (i0, (i0 + 1).min(n - 1), pos - i0 as f64)
    };
    let (nd, h, w) = (v.disparities(), v.height(), v.width());
    CostVolume::from_fn(v.channels(), nd * factor, h * factor, w * factor, |c, d, y, x| {
        let (d0, d1, td) = coords(d, nd);
        let (y0, y1, ty) = coords(y, h);
        let (x0, x1, tx) = coords(x, w);
        let mut sum = 0.0f64;
        for (dd, wd) in [(d0, 1.0 - td), (d1, td)] {
            for (yy, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                for (xx, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                    sum += wd * wy * wx * v.get(c, dd, yy, xx) as f64;
                }
            }
        }
        sum as f32
    })
    .expect("finite")
}

/// `<left half, right half> / (C * rms(left half))` per cell.
pub fn concat_projection(v: &CostVolume) -> CostVolume {
    let c = v.channels() / 2;
    CostVolume::from_fn(1, v.disparities(), v.height(), v.width(), |_, d, y, x| {
        let l: Vec<f64> = (0..c).map(|k| v.get(k, d, y, x) as f64).collect();
        let r: Vec<f64> = (c..2 * c).map(|k| v.get(k, d, y, x) as f64).collect();
        let ss: f64 = l.iter().map(|a| a * a).sum();
        if ss == 0.0 {
            return 0.0;
        }
        let dot: f64 = l.iter().zip(&r).map(|(a, b)| a * b).sum();
        (dot / (c as f64 * (ss / c as f64).sqrt())) as f32
    })
    .expect("finite")
}
