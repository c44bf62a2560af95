//! Crop extraction and range normalization for classifier inputs.
//!
//! Given an accepted (and dilated) mask, the source image is background-zeroed,
//! trimmed to the mask's tight bounding box, resized to a square, and finally
//! mapped to the range [-1, 1] by a per-image affine transform.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::mask::BinaryMask;

/// Planar (channel-major) f32 color image: `data[c * w * h + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbPlanes {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbPlanes {
    pub fn new(width: usize, height: usize) -> Self {
        RgbPlanes { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(CoreError::DimensionMismatch(format!(
                "buffer {} != 3x{width}x{height}",
                data.len()
            )));
        }
        Ok(RgbPlanes { width, height, data })
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[c * self.width * self.height + y * self.width + x] = v;
    }

    /// Load an image file as RGB planes with values in 0..=255.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| CoreError::image(path, e))?.into_rgb8();
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut out = RgbPlanes::new(w, h);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, p.0[c] as f32);
            }
        }
        Ok(out)
    }

    /// Save as an 8-bit RGB PNG; values are clamped to 0..=255 and rounded.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = [
                    self.get(0, x, y).round().clamp(0.0, 255.0) as u8,
                    self.get(1, x, y).round().clamp(0.0, 255.0) as u8,
                    self.get(2, x, y).round().clamp(0.0, 255.0) as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        img.save(path).map_err(|e| CoreError::image(path, e))
    }
}

/// Bilinear resample of a single plane, pixel-center aligned.
pub fn resize_plane(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h);
    assert!(dst_w > 0 && dst_h > 0 && src_w > 0 && src_h > 0);
    let mut dst = vec![0.0f32; dst_w * dst_h];
    let sx = src_w as f32 / dst_w as f32;
    let sy = src_h as f32 / dst_h as f32;
    for dy in 0..dst_h {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f32;
        for dx in 0..dst_w {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
            let bot = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
            dst[dy * dst_w + dx] = top * (1.0 - wy) + bot * wy;
        }
    }
    dst
}

/// Bilinear resample of all three planes.
pub fn resize_rgb(img: &RgbPlanes, dst_w: usize, dst_h: usize) -> RgbPlanes {
    let plane = img.width * img.height;
    let mut data = Vec::with_capacity(3 * dst_w * dst_h);
    for c in 0..3 {
        data.extend(resize_plane(&img.data[c * plane..(c + 1) * plane], img.width, img.height, dst_w, dst_h));
    }
    RgbPlanes { width: dst_w, height: dst_h, data }
}

/// Zero the background, trim to the mask's tight bounding box, and resize to
/// `out_size` x `out_size`. The aspect ratio is not preserved.
pub fn crop_and_resize(image: &RgbPlanes, mask: &BinaryMask, out_size: usize) -> Result<RgbPlanes> {
    if image.width != mask.width || image.height != mask.height {
        return Err(CoreError::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.width, image.height, mask.width, mask.height
        )));
    }
    let (x0, y0, x1, y1) = mask
        .bbox()
        .ok_or_else(|| CoreError::EmptyInput("cannot crop with an empty mask".into()))?;
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut crop = RgbPlanes::new(cw, ch);
    for c in 0..3 {
        for y in 0..ch {
            for x in 0..cw {
                let keep = mask.get(x0 + x, y0 + y) == 1;
                let v = if keep { image.get(c, x0 + x, y0 + y) } else { 0.0 };
                crop.set(c, x, y, v);
            }
        }
    }
    Ok(resize_rgb(&crop, out_size, out_size))
}

/// Provenance of a preprocessed crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropProvenance {
    pub image_id: String,
    pub mask_digest: String,
    /// Inclusive (x_min, y_min, x_max, y_max) in source coordinates.
    pub crop_bbox: (usize, usize, usize, usize),
}

/// A classifier-ready crop: 3 channels, square, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage {
    pub size: usize,
    /// Channel-major buffer of length `3 * size * size`.
    pub pixels: Vec<f32>,
    pub provenance: CropProvenance,
}

/// Outcome of range normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeOutcome {
    Mapped,
    /// The image was constant; the output is all zeros.
    ConstantInput,
}

/// Map an image affinely so its minimum becomes -1 and its maximum +1,
/// computed jointly over all channels. A constant image maps to all zeros.
pub fn normalize_range(data: &[f32]) -> (Vec<f32>, NormalizeOutcome) {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in data {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() || max <= min {
        return (vec![0.0; data.len()], NormalizeOutcome::ConstantInput);
    }
    let scale = 2.0 / (max - min);
    let out = data.iter().map(|&v| (v - min) * scale - 1.0).collect();
    (out, NormalizeOutcome::Mapped)
}

/// Normalize a crop into a [`PreprocessedImage`]; emits a warning to stderr
/// for constant inputs, which degrade to all zeros.
pub fn to_preprocessed(
    crop: &RgbPlanes,
    provenance: CropProvenance,
) -> (PreprocessedImage, NormalizeOutcome) {
    debug_assert_eq!(crop.width, crop.height);
    let (pixels, outcome) = normalize_range(&crop.data);
    if outcome == NormalizeOutcome::ConstantInput {
        eprintln!(
            "warning: constant image `{}` normalizes to all zeros",
            provenance.image_id
        );
    }
    (PreprocessedImage { size: crop.width, pixels, provenance }, outcome)
}

/// Hex digest of a mask's geometry and content, for crop provenance.
pub fn mask_digest(mask: &BinaryMask) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update((mask.width as u64).to_le_bytes());
    hasher.update((mask.height as u64).to_le_bytes());
    hasher.update(&mask.pixels);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
