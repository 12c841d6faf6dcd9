//! KITTI disparity PNG: 16-bit grayscale, disparity = raw / 256, raw 0 = invalid.

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{shape_err, FormatError, Result};
use crate::metrics::EvalMask;
use crate::volume::DisparityMap;

pub const KITTI_SCALE: f32 = 256.0;

pub fn read_kitti_disp_png(bytes: &[u8]) -> Result<(DisparityMap, EvalMask)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FormatError::Decode(e.to_string()))?;
    let buf = match img {
        DynamicImage::ImageLuma16(b) => b,
        DynamicImage::ImageLuma8(_) => {
            return Err(FormatError::UnsupportedPng("8-bit disparity PNG, expected 16-bit".into()).into())
        }
        other => {
            return Err(FormatError::UnsupportedPng(format!(
                "{:?} disparity PNG, expected single-channel 16-bit",
                other.color()
            ))
            .into())
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid: Vec<bool> = raw.iter().map(|&r| r != 0).collect();
    let data: Vec<f32> = raw.iter().map(|&r| r as f32 / KITTI_SCALE).collect();
    Ok((DisparityMap::new(h, w, data)?, EvalMask::new(h, w, valid)?))
}

/// Encodes valid pixels as `round(d * 256)` clamped to `1..=65535` so that a
/// valid pixel never collides with the invalid sentinel; invalid pixels are
/// written as 0.
pub fn write_kitti_disp_png(map: &DisparityMap, mask: &EvalMask) -> Result<Vec<u8>> {
    let (h, w) = (map.height(), map.width());
    if mask.height != h || mask.width != w {
        return Err(shape_err("mask and disparity map differ in size"));
    }
    let raw: Vec<u16> = map
        .data()
        .iter()
        .zip(&mask.valid)
        .map(|(&d, &v)| {
            if v && d.is_finite() {
                (d as f64 * KITTI_SCALE as f64).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| shape_err("png buffer size"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|e| FormatError::Decode(e.to_string()))?;
    Ok(out.into_inner())
}
