//! Attention concatenation volume: multi-level adaptive patch matching,
//! attention-weight generation and attention filtering of the
//! concatenation volume.

use crate::error::{invalid, shape_err, Result};
use crate::par;
use crate::volume::{
    channel_mean, group_correlation, soft_argmin, softmax_over_disparity, CostVolume, DisparityMap,
    FeatureMap,
};

/// Nine patch weights for one matching level.
///
/// `weights[3 * a + b]` is the weight of the tap at vertical offset
/// `(a - 1) * level` and horizontal offset `(b - 1) * level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchWeights {
    level: usize,
    weights: [f32; 9],
}

impl PatchWeights {
    pub fn new(level: usize, weights: [f32; 9]) -> Result<Self> {
        check_level(level)?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("patch weights must be finite"));
        }
        Ok(Self { level, weights })
    }

    /// Uniform `1/9` weights.
    pub fn uniform(level: usize) -> Result<Self> {
        Self::new(level, [1.0 / 9.0; 9])
    }

    /// All mass on the center tap.
    pub fn center(level: usize) -> Result<Self> {
        let mut w = [0.0; 9];
        w[4] = 1.0;
        Self::new(level, w)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn weights(&self) -> &[f32; 9] {
        &self.weights
    }

    /// Taps as `(dy, dx, weight)` in storage order.
    pub fn taps(&self) -> impl Iterator<Item = (isize, isize, f32)> + '_ {
        let k = self.level as isize;
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| ((i / 3) as isize * k - k, (i % 3) as isize * k - k, w))
    }
}

fn check_level(level: usize) -> Result<()> {
    if !(1..=3).contains(&level) {
        return Err(invalid(format!("patch level {level} not in 1..=3")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcvConfig {
    /// Full-resolution disparity range `D`.
    pub d_max: usize,
    pub n_groups: usize,
    /// Groups contributed by levels l1, l2, l3.
    pub group_split: [usize; 3],
    /// Channels `N_c` of the concatenation features.
    pub concat_channels: usize,
}

impl Default for AcvConfig {
    fn default() -> Self {
        Self { d_max: 192, n_groups: 40, group_split: [8, 16, 16], concat_channels: 32 }
    }
}

impl AcvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_split.iter().sum::<usize>() != self.n_groups {
            return Err(invalid(format!(
                "group split {:?} does not sum to {}",
                self.group_split, self.n_groups
            )));
        }
        if self.d_max == 0 || self.d_max % 4 != 0 {
            return Err(invalid(format!("d_max {} must be a positive multiple of 4", self.d_max)));
        }
        Ok(())
    }

    /// Disparity bins at quarter resolution.
    pub fn quarter_disparities(&self) -> usize {
        self.d_max / 4
    }
}

/// Patch-matching correlation for one feature level.
///
/// `out(g, d, y, x) = sum over taps (dy, dx) of w * corr(g, d, y - dy, x - dx)`
/// where `corr` is [`group_correlation`] and taps falling outside the frame
/// contribute zero. The dilation of the 3x3 patch equals `level`.
pub fn mapm_level(
    f_l: &FeatureMap,
    f_r: &FeatureMap,
    level: usize,
    weights: &PatchWeights,
    disparities: usize,
    n_groups: usize,
) -> Result<CostVolume> {
    check_level(level)?;
    if weights.level() != level {
        return Err(invalid(format!(
            "patch weights are for level {}, requested level {level}",
            weights.level()
        )));
    }
    let corr = group_correlation(f_l, f_r, disparities, n_groups)?;
    let (h, w) = (corr.height, corr.width);
    let taps: Vec<_> = weights.taps().collect();
    let mut data = vec![0.0f32; corr.data.len()];
    par::for_each_chunk(&mut data, h * w, |idx, plane| {
        let src = &corr.data[idx * h * w..(idx + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for &(dy, dx, wt) in &taps {
                    let sy = y as isize - dy;
                    let sx = x as isize - dx;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += wt * src[sy as usize * w + sx as usize];
                    }
                }
                plane[y * w + x] = acc;
            }
        }
    });
    Ok(CostVolume { data, ..corr })
}

/// One level's inputs to [`build_mapm_volume`].
#[derive(Debug, Clone, Copy)]
pub struct MapmLevel<'a> {
    pub left: &'a FeatureMap,
    pub right: &'a FeatureMap,
    pub weights: PatchWeights,
}

/// Concatenates the three per-level patch-matching volumes along the group
/// axis, giving `n_groups x D/4 x H x W`.
pub fn build_mapm_volume(levels: &[MapmLevel<'_>; 3], cfg: &AcvConfig) -> Result<CostVolume> {
    cfg.validate()?;
    let first = levels[0].left;
    if first.channels % cfg.group_split[0] != 0 {
        return Err(shape_err("level 1 channels not divisible by its group count"));
    }
    let per_group = first.channels / cfg.group_split[0];
    for (i, lv) in levels.iter().enumerate() {
        let want = cfg.group_split[i] * per_group;
        if lv.left.channels != want || !lv.left.same_shape(lv.right) {
            return Err(shape_err(format!(
                "level {} has {} channels, expected {} ({} groups x {})",
                i + 1,
                lv.left.channels,
                want,
                cfg.group_split[i],
                per_group
            )));
        }
        if lv.left.height != first.height || lv.left.width != first.width {
            return Err(shape_err("levels differ in spatial size"));
        }
    }
    let nd = cfg.quarter_disparities();
    let mut data = Vec::with_capacity(cfg.n_groups * nd * first.height * first.width);
    for (i, lv) in levels.iter().enumerate() {
        let v = mapm_level(lv.left, lv.right, i + 1, &lv.weights, nd, cfg.group_split[i])?;
        data.extend_from_slice(&v.data);
    }
    Ok(CostVolume {
        channels: cfg.n_groups,
        disparities: nd,
        height: first.height,
        width: first.width,
        data,
        scale: first.scale,
    })
}

/// Stand-in for the learned cost-aggregation network.
pub trait VolumeRegularizer: Sync {
    fn regularize(&self, v: &CostVolume) -> CostVolume;
}

/// Leaves the volume unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl VolumeRegularizer for Identity {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        v.clone()
    }
}

/// Applies an inner regularizer, then multiplies by a fixed gain.
///
/// The gain plays the role of the learned output scale of the aggregation
/// network: it sets how peaked the softmax over the regularized costs is.
#[derive(Debug, Clone, Copy)]
pub struct Gain<R> {
    pub inner: R,
    pub gain: f32,
}

impl<R: VolumeRegularizer> VolumeRegularizer for Gain<R> {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        crate::volume::scale_volume(&self.inner.regularize(v), self.gain)
    }
}

impl<R: VolumeRegularizer + ?Sized> VolumeRegularizer for &R {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        (**self).regularize(v)
    }
}

impl<R: VolumeRegularizer + ?Sized> VolumeRegularizer for Box<R> {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        (**self).regularize(v)
    }
}

/// `A = mean over groups of regularizer(c_patch)`.
pub fn generate_attention_weights(c_patch: &CostVolume, regularizer: &dyn VolumeRegularizer) -> CostVolume {
    channel_mean(&regularizer.regularize(c_patch))
}

/// Multiplies every channel of `c_concat` by the single-channel weights `a`.
pub fn attention_filter(a: &CostVolume, c_concat: &CostVolume) -> Result<CostVolume> {
    a.require_single_channel("attention_filter")?;
    if !a.same_grid(c_concat) {
        return Err(shape_err(format!(
            "attention {}x{}x{} vs volume {}x{}x{}",
            a.disparities, a.height, a.width, c_concat.disparities, c_concat.height, c_concat.width
        )));
    }
    let n = a.data.len();
    let mut out = c_concat.clone();
    par::for_each_chunk(&mut out.data, n, |_, chunk| {
        for (o, &w) in chunk.iter_mut().zip(&a.data) {
            *o *= w;
        }
    });
    Ok(out)
}

/// Disparity regressed from the attention weights (softmax then soft-argmin).
pub fn regress_attention_disparity(a: &CostVolume) -> Result<DisparityMap> {
    a.require_single_channel("regress_attention_disparity")?;
    Ok(soft_argmin(&softmax_over_disparity(a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::rng::SeededRng;

    #[test]
    fn center_weights_reduce_to_group_correlation() {
        let mut rng = SeededRng::new(1);
        let l = rng.feature_map(8, 7, 9);
        let r = rng.feature_map(8, 7, 9);
        for level in 1..=3 {
            let got = mapm_level(&l, &r, level, &PatchWeights::center(level).unwrap(), 4, 4).unwrap();
            assert_eq!(got, group_correlation(&l, &r, 4, 4).unwrap());
        }
    }

    #[test]
    fn uniform_weights_on_constant_features() {
        let l = FeatureMap::from_fn(4, 8, 10, |c, _, _| 0.5 + c as f32 * 0.1).unwrap();
        let got = mapm_level(&l, &l, 1, &PatchWeights::uniform(1).unwrap(), 3, 2).unwrap();
        let center = group_correlation(&l, &l, 3, 2).unwrap();
        // interior pixels where all nine taps and their shifts are in frame
        for g in 0..2 {
            for d in 0..3 {
                for y in 1..7 {
                    for x in (d + 1)..9 {
                        assert!((got.get(g, d, y, x) - center.get(g, d, y, x)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn mapm_matches_nine_tap_oracle() {
        let mut rng = SeededRng::new(2);
        let l = rng.feature_map(6, 8, 10);
        let r = rng.feature_map(6, 8, 10);
        let mut w = [0.0; 9];
        w.iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0));
        let pw = PatchWeights::new(2, w).unwrap();
        let got = mapm_level(&l, &r, 2, &pw, 4, 3).unwrap();
        let want = reference::mapm_level(&l, &r, &pw, 4, 3);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mapm_rejects_bad_level() {
        let f = FeatureMap::zeros(2, 3, 3);
        assert!(mapm_level(&f, &f, 4, &PatchWeights::center(1).unwrap(), 2, 1).is_err());
        assert!(PatchWeights::uniform(0).is_err());
        assert!(mapm_level(&f, &f, 2, &PatchWeights::center(1).unwrap(), 2, 1).is_err());
    }

    #[test]
    fn mapm_volume_layout() {
        let mut rng = SeededRng::new(3);
        let cfg = AcvConfig { d_max: 16, ..AcvConfig::default() };
        let maps: Vec<_> = [8, 16, 16].iter().map(|g| (rng.feature_map(g * 2, 5, 6), rng.feature_map(g * 2, 5, 6))).collect();
        let levels = [1, 2, 3].map(|k| MapmLevel {
            left: &maps[k - 1].0,
            right: &maps[k - 1].1,
            weights: PatchWeights::uniform(k).unwrap(),
        });
        let v = build_mapm_volume(&levels, &cfg).unwrap();
        assert_eq!((v.channels(), v.disparities()), (40, 4));
        let l1 = mapm_level(&maps[0].0, &maps[0].1, 1, &levels[0].weights, 4, 8).unwrap();
        assert_eq!(&v.data()[..l1.len()], l1.data());
        let l3 = mapm_level(&maps[2].0, &maps[2].1, 3, &levels[2].weights, 4, 16).unwrap();
        assert_eq!(&v.data()[v.len() - l3.len()..], l3.data());

        assert_eq!(AcvConfig::default().quarter_disparities(), 48);
        let bad = [levels[0], levels[0], levels[2]];
        assert!(build_mapm_volume(&bad, &cfg).is_err());
    }

    #[test]
    fn attention_weights_are_group_mean() {
        let v = CostVolume::from_fn(1, 2, 2, 2, |_, d, y, x| (d + y + x) as f32).unwrap();
        assert_eq!(generate_attention_weights(&v, &Identity), v);
        let c = CostVolume::from_fn(3, 2, 2, 2, |_, _, _, _| 1.5).unwrap();
        assert!(generate_attention_weights(&c, &Identity).data().iter().all(|&x| x == 1.5));
        let ab = CostVolume::from_fn(2, 1, 1, 1, |g, _, _, _| if g == 0 { 1.0 } else { 2.0 }).unwrap();
        assert_eq!(generate_attention_weights(&ab, &Identity).data(), &[1.5]);
    }

    #[test]
    fn attention_filter_examples() {
        let mut rng = SeededRng::new(4);
        let c = rng.volume(4, 3, 5, 6);
        let ones = CostVolume::from_fn(1, 3, 5, 6, |_, _, _, _| 1.0).unwrap();
        assert_eq!(attention_filter(&ones, &c).unwrap(), c);
        let zeros = CostVolume::zeros(1, 3, 5, 6);
        assert!(attention_filter(&zeros, &c).unwrap().data().iter().all(|&x| x == 0.0));
        let a = rng.volume(1, 3, 5, 6);
        assert_eq!(attention_filter(&a, &c).unwrap(), reference::attention_filter(&a, &c));
        assert!(attention_filter(&CostVolume::zeros(1, 2, 5, 6), &c).is_err());
    }

    #[test]
    fn attention_disparity_examples() {
        let mut a = CostVolume::zeros(1, 8, 1, 1);
        a.data[5] = 50.0;
        assert!((regress_attention_disparity(&a).unwrap().get(0, 0) - 5.0).abs() < 1e-3);
        let c = CostVolume::from_fn(1, 8, 2, 2, |_, _, _, _| 0.3).unwrap();
        assert!(regress_attention_disparity(&c).unwrap().data().iter().all(|&x| x == 3.5));

        let mut rng = SeededRng::new(8);
        let a = rng.volume(1, 6, 3, 3);
        let got = regress_attention_disparity(&a).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let logits: Vec<f32> = (0..6).map(|d| a.get(0, d, y, x)).collect();
                let probs: Vec<f32> = reference::softmax(&logits).iter().map(|&p| p as f32).collect();
                let want = reference::expectation(&probs) as f32;
                assert!((got.get(y, x) - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn filter_is_linear_in_attention() {
        let mut rng = SeededRng::new(5);
        let c = rng.volume(3, 4, 4, 4);
        let a = rng.volume(1, 4, 4, 4);
        let s = 2.5;
        let lhs = attention_filter(&crate::volume::scale_volume(&a, s), &c).unwrap();
        let rhs = attention_filter(&a, &c).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - s * y).abs() <= 1e-6 * (1.0 + y.abs()));
        }
    }
}
