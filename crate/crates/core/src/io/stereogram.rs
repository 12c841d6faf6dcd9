//! Random-dot stereo pairs with exactly known disparity.

use crate::error::{invalid, Result};
use crate::io::GrayImage;
use crate::metrics::EvalMask;
use crate::rng::SeededRng;
use crate::volume::DisparityMap;

/// Left-referenced integer disparity of the scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DisparitySpec {
    Constant(u32),
    /// Row-major `height x width` map.
    Map(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereogramSpec {
    pub height: usize,
    pub width: usize,
    pub disparity: DisparitySpec,
    /// Probability that a pixel carries a random dot instead of the
    /// mid-gray background.
    pub dot_density: f32,
    pub seed: u64,
}

impl StereogramSpec {
    pub fn constant(height: usize, width: usize, disparity: u32, seed: u64) -> Self {
        Self { height, width, disparity: DisparitySpec::Constant(disparity), dot_density: 1.0, seed }
    }

    fn disparity_at(&self, y: usize, x: usize) -> u32 {
        match &self.disparity {
            DisparitySpec::Constant(d) => *d,
            DisparitySpec::Map(m) => m[y * self.width + x],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("stereogram dimensions must be positive"));
        }
        if !(self.dot_density > 0.0 && self.dot_density <= 1.0) {
            return Err(invalid(format!("dot density {} not in (0, 1]", self.dot_density)));
        }
        let max = match &self.disparity {
            DisparitySpec::Constant(d) => *d,
            DisparitySpec::Map(m) => {
                if m.len() != self.height * self.width {
                    return Err(invalid("disparity map size does not match the stereogram"));
                }
                m.iter().copied().max().unwrap_or(0)
            }
        };
        if 4 * max as usize >= self.width {
            return Err(invalid(format!("max disparity {max} must be below width/4 = {}", self.width as f32 / 4.0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stereogram {
    pub left: GrayImage,
    pub right: GrayImage,
    pub gt: DisparityMap,
    /// Valid where the left pixel is visible in the right view.
    pub mask: EvalMask,
}

/// Background intensity, an exact 8-bit level so that PGM/PNG export is lossless.
const BACKGROUND: f32 = 128.0 / 255.0;

fn level(rng: &mut SeededRng) -> f32 {
    rng.int(0, 255) as f32 / 255.0
}

/// Renders the right view by forward-projecting every left pixel to
/// `x - d`. When several left pixels land on the same right pixel the one
/// with the larger disparity (the nearer surface) wins and the others are
/// occluded. Right pixels nobody projects to get fresh random texture.
pub fn generate_stereogram(spec: &StereogramSpec) -> Result<Stereogram> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut dots = SeededRng::with_stream(spec.seed, 0);
    let mut fill = SeededRng::with_stream(spec.seed, 1);

    let mut left = vec![BACKGROUND; h * w];
    for v in left.iter_mut() {
        if dots.unit() < spec.dot_density {
            *v = level(&mut dots);
        }
    }

    let mut right = vec![0.0f32; h * w];
    let mut valid = vec![false; h * w];
    let mut gt = vec![0.0f32; h * w];
    let mut owner: Vec<Option<usize>> = vec![None; w];
    for y in 0..h {
        owner.iter_mut().for_each(|o| *o = None);
        for x in 0..w {
            let d = spec.disparity_at(y, x) as usize;
            gt[y * w + x] = d as f32;
            if d > x {
                continue;
            }
            let xr = x - d;
            let wins = match owner[xr] {
                None => true,
                Some(prev) => d > spec.disparity_at(y, prev) as usize,
            };
            if wins {
                owner[xr] = Some(x);
            }
        }
        for xr in 0..w {
            right[y * w + xr] = match owner[xr] {
                Some(x) => {
                    valid[y * w + x] = true;
                    left[y * w + x]
                }
                None => level(&mut fill),
            };
        }
    }
    Ok(Stereogram {
        left: GrayImage::new(h, w, left)?,
        right: GrayImage::new(h, w, right)?,
        gt: DisparityMap::new(h, w, gt)?,
        mask: EvalMask::new(h, w, valid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_gives_identical_views() {
        let s = generate_stereogram(&StereogramSpec::constant(16, 32, 0, 5)).unwrap();
        assert_eq!(s.left, s.right);
        assert_eq!(s.mask.count(), 16 * 32);
    }

    #[test]
    fn constant_shift_matches_direct_oracle() {
        let s = generate_stereogram(&StereogramSpec::constant(8, 64, 8, 1)).unwrap();
        for y in 0..8 {
            for x in 0..64 {
                assert_eq!(s.mask.is_valid(y, x), x >= 8);
                if x >= 8 {
                    assert_eq!(s.right.get(y, x - 8), s.left.get(y, x));
                }
            }
        }
    }

    #[test]
    fn two_region_occlusion_band() {
        let (h, w) = (4, 64);
        let map: Vec<u32> = (0..h * w).map(|i| if i % w < 32 { 4 } else { 12 }).collect();
        let spec = StereogramSpec {
            height: h,
            width: w,
            disparity: DisparitySpec::Map(map),
            dot_density: 0.7,
            seed: 9,
        };
        let s = generate_stereogram(&spec).unwrap();
        for y in 0..h {
            for x in 0..w {
                // out of frame on the left, and the 12 - 4 = 8 pixels hidden
                // behind the nearer right region
                let want = !(x < 4 || (24..32).contains(&x));
                assert_eq!(s.mask.is_valid(y, x), want, "pixel ({y}, {x})");
            }
        }
    }

    #[test]
    fn reproducible_and_validated() {
        let spec = StereogramSpec { dot_density: 0.4, ..StereogramSpec::constant(8, 40, 3, 77) };
        assert_eq!(generate_stereogram(&spec).unwrap(), generate_stereogram(&spec).unwrap());
        assert!(generate_stereogram(&StereogramSpec::constant(8, 40, 10, 1)).is_err());
        let bad = StereogramSpec { dot_density: 0.0, ..spec };
        assert!(generate_stereogram(&bad).is_err());
    }
}
