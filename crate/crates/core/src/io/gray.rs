use std::path::Path;

use image::{DynamicImage, GrayImage as Luma8Image, ImageFormat};

use crate::error::{invalid, shape_err, Error, FormatError, Result};

/// Grayscale intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(format!("image data has {} values, expected {height}x{width}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(invalid("image intensities must be finite and within [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

fn decode(img: DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => {
            return Err(FormatError::Decode(format!("expected a grayscale image, got {:?}", other.color())).into())
        }
    };
    GrayImage::new(h, w, data)
}

/// Decodes an 8- or 16-bit grayscale PGM or PNG.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory(bytes).map_err(|e| FormatError::Decode(e.to_string()))?;
    decode(img)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_gray(&std::fs::read(path)?)
}

/// Writes an 8-bit grayscale image; the format follows the extension
/// (`.png`, otherwise binary PGM).
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = Luma8Image::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| shape_err("image buffer size"))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => ImageFormat::Png,
        _ => ImageFormat::Pnm,
    };
    buf.save_with_format(path, format).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => FormatError::Decode(other.to_string()).into(),
    })
}
