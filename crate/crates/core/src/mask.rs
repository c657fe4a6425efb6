//! Binary lesion masks loaded from 8-bit grayscale PNG/PGM files.

use std::path::Path;

use image::{ColorType, GrayImage, ImageReader, Luma};

use crate::error::{Error, Result};

pub const DEFAULT_MASK_THRESHOLD: u8 = 127;

/// Per-pixel boolean mask, row-major; `true` marks lesion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![bits.len()],
            });
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Writes the mask as an 8-bit grayscale PNG (lesion = 255).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        });
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
    }
}

/// Loads an 8-bit grayscale image; a pixel is lesion iff its intensity is
/// strictly greater than `threshold`.
pub fn load_mask(path: impl AsRef<Path>, threshold: u8) -> Result<BinaryMask> {
    let path = path.as_ref();
    let image_err = |detail: String| Error::Image {
        path: path.to_path_buf(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| image_err(e.to_string()))?;
    if decoded.color() != ColorType::L8 {
        return Err(Error::NotGrayscale(path.to_path_buf()));
    }
    let gray = decoded.into_luma8();
    let (w, h) = gray.dimensions();
    let bits = gray.pixels().map(|p| p.0[0] > threshold).collect();
    BinaryMask::new(h as usize, w as usize, bits)
}
