//! Disparity error metrics and training losses as masked reductions.

use crate::error::{invalid, shape_err, Result};
use crate::volume::DisparityMap;

/// Valid-pixel mask. Invalid ground truth is always expressed here, never
/// as a sentinel value inside the maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask {
    pub height: usize,
    pub width: usize,
    pub valid: Vec<bool>,
}

impl EvalMask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != height * width {
            return Err(shape_err("mask size"));
        }
        Ok(Self { height, width, valid })
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self { height, width, valid: vec![true; height * width] }
    }

    /// Everything except a `border`-pixel frame.
    pub fn interior(height: usize, width: usize, border: usize) -> Self {
        let valid = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                y >= border && x >= border && y + border < height && x + border < width
            })
            .collect();
        Self { height, width, valid }
    }

    /// Pixels valid in both masks.
    pub fn and(&self, other: &EvalMask) -> Result<EvalMask> {
        if self.height != other.height || self.width != other.width {
            return Err(shape_err("mask sizes differ"));
        }
        let valid = self.valid.iter().zip(&other.valid).map(|(a, b)| *a && *b).collect();
        Ok(Self { height: self.height, width: self.width, valid })
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }
}

/// Residuals `pred - gt` over valid pixels, in raster order.
fn residuals(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Result<Vec<f64>> {
    if !pred.same_shape(gt) || mask.height != gt.height || mask.width != gt.width {
        return Err(shape_err(format!(
            "prediction {}x{}, ground truth {}x{}, mask {}x{}",
            pred.height, pred.width, gt.height, gt.width, mask.height, mask.width
        )));
    }
    let r: Vec<f64> = pred
        .data
        .iter()
        .zip(&gt.data)
        .zip(&mask.valid)
        .filter(|(_, v)| **v)
        .map(|((p, g), _)| *p as f64 - *g as f64)
        .collect();
    if r.is_empty() {
        return Err(invalid("evaluation mask has no valid pixels"));
    }
    Ok(r)
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// End-point error: mean absolute disparity error.
pub fn epe(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Result<f64> {
    let r = residuals(pred, gt, mask)?;
    Ok(r.iter().map(|e| e.abs()).sum::<f64>() / r.len() as f64)
}

/// Percentage of valid pixels whose error exceeds `max(3, 0.05 * gt)`.
pub fn d1(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Result<f64> {
    let r = residuals(pred, gt, mask)?;
    let outliers = gt
        .data
        .iter()
        .zip(&mask.valid)
        .filter(|(_, v)| **v)
        .zip(&r)
        .filter(|((g, _), e)| e.abs() > (3.0f64).max(0.05 * **g as f64))
        .count();
    Ok(percent(outliers, r.len()))
}

/// Percentage of valid pixels with error larger than `x`.
pub fn bad_x(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(invalid(format!("bad-x threshold {x} must be positive")));
    }
    let r = residuals(pred, gt, mask)?;
    Ok(percent(r.iter().filter(|e| e.abs() > x).count(), r.len()))
}

/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Mean smooth-L1 loss over valid pixels.
pub fn smooth_l1(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> Result<f64> {
    let r = residuals(pred, gt, mask)?;
    let total: f64 = r
        .iter()
        .map(|e| {
            let a = e.abs();
            if a < SMOOTH_L1_BETA {
                0.5 * a * a / SMOOTH_L1_BETA
            } else {
                a - 0.5 * SMOOTH_L1_BETA
            }
        })
        .sum();
    Ok(total / r.len() as f64)
}

/// Loss coefficients for both networks' multi-output supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_att: f64,
    pub lambda_0: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_att_f: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_att: 0.5, lambda_0: 0.5, lambda_1: 0.7, lambda_2: 1.0, lambda_att_f: 0.5, lambda_f: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_att, self.lambda_0, self.lambda_1, self.lambda_2, self.lambda_att_f, self.lambda_f];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `lambda_att * L(d_att) + sum_i lambda_i * L(d_i)` with `L` smooth-L1.
pub fn acv_total_loss(
    d_att: &DisparityMap,
    outputs: [&DisparityMap; 3],
    gt: &DisparityMap,
    mask: &EvalMask,
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    let lambdas = [w.lambda_0, w.lambda_1, w.lambda_2];
    let mut total = w.lambda_att * smooth_l1(d_att, gt, mask)?;
    for (d, l) in outputs.iter().zip(lambdas) {
        total += l * smooth_l1(d, gt, mask)?;
    }
    Ok(total)
}

/// `lambda_att_f * L(d_att_f) + lambda_f * L(d_f)`.
pub fn fast_acv_total_loss(
    d_att_f: &DisparityMap,
    d_f: &DisparityMap,
    gt: &DisparityMap,
    mask: &EvalMask,
    w: &LossWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(w.lambda_att_f * smooth_l1(d_att_f, gt, mask)? + w.lambda_f * smooth_l1(d_f, gt, mask)?)
}
