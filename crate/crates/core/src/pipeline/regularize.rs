//! Separable box filtering standing in for the learned 3D aggregation.

use crate::acv::{Gain, Identity, VolumeRegularizer};
use crate::par;
use crate::volume::{clamp_index, CostVolume};

/// One edge-replicated running mean along an axis of stride `stride` and
/// length `n`, applied to every line of `src` into `dst`.
fn mean_pass(src: &[f32], dst: &mut [f32], block: usize, n: usize, stride: usize, radius: usize) {
    let taps = (2 * radius + 1) as f64;
    let r = radius as isize;
    par::for_each_chunk(dst, block, |b, out| {
        let base = &src[b * block..(b + 1) * block];
        for (i, o) in out.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let line = i - pos * stride;
            let mut sum = 0.0f64;
            for k in -r..=r {
                sum += base[line + clamp_index(pos as isize + k, n) * stride] as f64;
            }
            *o = (sum / taps) as f32;
        }
    });
}

/// Mean filter over `(2r+1)^3` windows in `(d, y, x)` with replicated edges,
/// applied per channel as three 1D passes. Radius 0 returns the input.
pub fn box3d_regularize(v: &CostVolume, radius: usize) -> CostVolume {
    if radius == 0 || v.is_empty() {
        return v.clone();
    }
    let (nd, h, w) = (v.disparities, v.height, v.width);
    let plane = h * w;
    let mut a = vec![0.0f32; v.data.len()];
    let mut b = vec![0.0f32; v.data.len()];
    mean_pass(&v.data, &mut a, plane, w, 1, radius);
    mean_pass(&a, &mut b, plane, h, w, radius);
    mean_pass(&b, &mut a, nd * plane, nd, plane, radius);
    CostVolume { channels: v.channels, disparities: nd, height: h, width: w, data: a, scale: v.scale }
}

/// Spatial-only variant of [`box3d_regularize`]: filters `(y, x)` and leaves
/// the disparity axis alone. Used where that axis is a hypothesis rank
/// rather than an ordered disparity.
pub fn box2d_regularize(v: &CostVolume, radius: usize) -> CostVolume {
    if radius == 0 || v.is_empty() {
        return v.clone();
    }
    let (h, w) = (v.height, v.width);
    let plane = h * w;
    let mut a = vec![0.0f32; v.data.len()];
    let mut b = vec![0.0f32; v.data.len()];
    mean_pass(&v.data, &mut a, plane, w, 1, radius);
    mean_pass(&a, &mut b, plane, h, w, radius);
    CostVolume { channels: v.channels, disparities: v.disparities, height: h, width: w, data: b, scale: v.scale }
}

/// [`box3d_regularize`] as a [`VolumeRegularizer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Box3d {
    pub radius: usize,
}

impl VolumeRegularizer for Box3d {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        box3d_regularize(v, self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    Identity,
    Box3d { radius: usize },
}

impl Default for RegularizerKind {
    fn default() -> Self {
        Self::Box3d { radius: 1 }
    }
}

impl RegularizerKind {
    /// Parses `identity` or `box3d`, the latter with `radius`.
    pub fn parse(name: &str, radius: usize) -> Result<Self, String> {
        match name {
            "identity" => Ok(Self::Identity),
            "box3d" => Ok(Self::Box3d { radius }),
            _ => Err(format!("unknown regularizer '{name}' (identity|box3d)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Box3d { .. } => "box3d",
        }
    }
}

impl VolumeRegularizer for RegularizerKind {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        match *self {
            Self::Identity => Identity.regularize(v),
            Self::Box3d { radius } => box3d_regularize(v, radius),
        }
    }
}

impl RegularizerKind {
    /// The same filter restricted to the spatial axes.
    pub fn spatial(&self) -> SpatialOnly {
        SpatialOnly(*self)
    }
}

/// A [`RegularizerKind`] that never mixes along the disparity axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialOnly(pub RegularizerKind);

impl VolumeRegularizer for SpatialOnly {
    fn regularize(&self, v: &CostVolume) -> CostVolume {
        match self.0 {
            RegularizerKind::Identity => v.clone(),
            RegularizerKind::Box3d { radius } => box2d_regularize(v, radius),
        }
    }
}

/// The regularizer both pipelines apply: `kind` on the spatial axes,
/// followed by the logit gain.
pub fn pipeline_regularizer(kind: RegularizerKind, logit_scale: f32) -> Gain<SpatialOnly> {
    Gain { inner: kind.spatial(), gain: logit_scale }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::rng::SeededRng;

    #[test]
    fn radius_zero_is_identity() {
        let v = SeededRng::new(1).volume(2, 3, 4, 5);
        assert_eq!(box3d_regularize(&v, 0), v);
    }

    #[test]
    fn constant_volume_unchanged() {
        let v = CostVolume::new(2, 4, 3, 5, vec![0.75; 120]).unwrap();
        assert_eq!(box3d_regularize(&v, 2), v);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = SeededRng::new(2);
        let v = rng.volume(1, 6, 6, 6);
        let got = box3d_regularize(&v, 1);
        let want = reference::box3d(&v, 1);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let v = rng.volume(3, 5, 4, 7);
        let got = box3d_regularize(&v, 2);
        let want = reference::box3d(&v, 2);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn box2d_leaves_disparity_axis() {
        let v = SeededRng::new(5).volume(1, 4, 5, 5);
        let got = box2d_regularize(&v, 1);
        let want = reference::box3d(&v, 1);
        assert_ne!(got, box3d_regularize(&v, 1));
        // constant along d: both filters agree
        let flat = CostVolume::from_fn(1, 3, 5, 5, |_, _, y, x| v.get(0, 0, y, x)).unwrap();
        let a = box2d_regularize(&flat, 1);
        let b = reference::box3d(&flat, 1);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(got.disparities(), want.disparities());
    }

    #[test]
    fn parse_names() {
        assert_eq!(RegularizerKind::parse("box3d", 2).unwrap(), RegularizerKind::Box3d { radius: 2 });
        assert_eq!(RegularizerKind::parse("identity", 2).unwrap().name(), "identity");
        assert!(RegularizerKind::parse("hourglass", 1).is_err());
    }
}
