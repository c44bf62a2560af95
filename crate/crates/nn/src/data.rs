//! In-memory training samples, file loaders, and tensor batching.

use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::unet::SegmenterConfig;
use dermpipe_core::dataset::ImageRecord;
use dermpipe_core::mask::BinaryMask;
use dermpipe_core::preprocess::{normalize_range, resize_plane, resize_rgb, RgbPlanes};

/// One segmentation example at model resolution: image channels in [0, 1],
/// mask values in {0, 1}.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub id: String,
    /// Channel-major, length `3 * height * width`.
    pub image: Vec<f32>,
    /// Row-major, length `height * width`.
    pub mask: Vec<f32>,
}

/// One classification example: a normalized crop plus its task-label index.
#[derive(Debug, Clone)]
pub struct ClfSample {
    pub id: String,
    /// Channel-major, length `3 * size * size`, values in [-1, 1].
    pub pixels: Vec<f32>,
    pub label: usize,
}

/// Resample a native-resolution image/mask pair to the segmenter's input
/// size. The pair must agree on dimensions beforehand.
pub fn seg_sample(
    id: &str,
    image: &RgbPlanes,
    mask: &BinaryMask,
    config: &SegmenterConfig,
) -> Result<SegSample> {
    if image.width != mask.width || image.height != mask.height {
        return Err(NnError::SizeMismatch { ids: vec![id.to_string()] });
    }
    let resized = resize_rgb(image, config.width, config.height);
    let image_vec: Vec<f32> = resized.data.iter().map(|v| v / 255.0).collect();
    let mask_f: Vec<f32> = mask.pixels.iter().map(|&p| p as f32).collect();
    let mask_resized = resize_plane(&mask_f, mask.width, mask.height, config.width, config.height);
    let mask_vec: Vec<f32> = mask_resized.iter().map(|&v| f32::from(v > 0.5)).collect();
    Ok(SegSample { id: id.to_string(), image: image_vec, mask: mask_vec })
}

/// Load segmentation samples for records that carry ground-truth masks.
/// Size mismatches are collected and reported together.
pub fn load_seg_samples(records: &[ImageRecord], config: &SegmenterConfig) -> Result<Vec<SegSample>> {
    let mut samples = Vec::with_capacity(records.len());
    let mut mismatched = Vec::new();
    for record in records {
        let mask_path = record.mask_path.as_ref().ok_or_else(|| {
            NnError::InvalidConfig(format!("record `{}` has no ground-truth mask", record.image_id))
        })?;
        let image = RgbPlanes::load(&record.image_path)?;
        let mask = BinaryMask::load_png(mask_path)?;
        match seg_sample(&record.image_id, &image, &mask, config) {
            Ok(s) => samples.push(s),
            Err(NnError::SizeMismatch { .. }) => mismatched.push(record.image_id.clone()),
            Err(e) => return Err(e),
        }
    }
    if !mismatched.is_empty() {
        return Err(NnError::SizeMismatch { ids: mismatched });
    }
    Ok(samples)
}

/// Load one preprocessed crop file and normalize it to [-1, 1].
pub fn clf_sample_from_crop(id: &str, path: &Path, label: usize, size: usize) -> Result<ClfSample> {
    let crop = RgbPlanes::load(path)?;
    if crop.width != size || crop.height != size {
        return Err(NnError::WrongInputSize { expected: 3 * size * size, got: crop.data.len() });
    }
    let (pixels, _) = normalize_range(&crop.data);
    Ok(ClfSample { id: id.to_string(), pixels, label })
}

pub fn image_batch<B: Backend>(
    samples: &[&SegSample],
    height: usize,
    width: usize,
    device: &B::Device,
) -> Tensor<B, 4> {
    let mut flat = Vec::with_capacity(samples.len() * 3 * height * width);
    for s in samples {
        flat.extend_from_slice(&s.image);
    }
    Tensor::from_data(TensorData::new(flat, [samples.len(), 3, height, width]), device)
}

pub fn mask_batch<B: Backend>(
    samples: &[&SegSample],
    height: usize,
    width: usize,
    device: &B::Device,
) -> Tensor<B, 4> {
    let mut flat = Vec::with_capacity(samples.len() * height * width);
    for s in samples {
        flat.extend_from_slice(&s.mask);
    }
    Tensor::from_data(TensorData::new(flat, [samples.len(), 1, height, width]), device)
}

pub fn crop_batch<B: Backend>(
    pixel_rows: &[&[f32]],
    size: usize,
    device: &B::Device,
) -> Tensor<B, 4> {
    let mut flat = Vec::with_capacity(pixel_rows.len() * 3 * size * size);
    for row in pixel_rows {
        flat.extend_from_slice(row);
    }
    Tensor::from_data(TensorData::new(flat, [pixel_rows.len(), 3, size, size]), device)
}

/// One-hot label matrix `[batch, n_classes]`.
pub fn onehot_batch<B: Backend>(
    labels: &[usize],
    n_classes: usize,
    device: &B::Device,
) -> Tensor<B, 2> {
    let mut flat = vec![0.0f32; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        flat[i * n_classes + l] = 1.0;
    }
    Tensor::from_data(TensorData::new(flat, [labels.len(), n_classes]), device)
}

/// Mirror a channel-major square crop left-to-right.
pub fn flip_horizontal(pixels: &[f32], size: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; pixels.len()];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                out[c * size * size + y * size + x] = pixels[c * size * size + y * size + (size - 1 - x)];
            }
        }
    }
    out
}

/// Binary cross-entropy between probability and {0,1} target tensors.
pub fn bce_loss<B: Backend, const D: usize>(
    probs: Tensor<B, D>,
    targets: Tensor<B, D>,
) -> Tensor<B, 1> {
    let eps = 1e-7;
    let p = probs.clamp(eps, 1.0 - eps);
    let pos = targets.clone() * p.clone().log();
    let neg = (targets.neg() + 1.0) * (p.neg() + 1.0).log();
    (pos + neg).mean().neg()
}

/// Fraction of positions where thresholded probability matches the target.
pub fn binary_accuracy<B: Backend, const D: usize>(
    probs: Tensor<B, D>,
    targets: Tensor<B, D>,
) -> f64 {
    use burn::tensor::ElementConversion;
    let preds = probs.greater_elem(0.5).float();
    let wrong: f32 = (preds - targets).abs().mean().into_scalar().elem();
    1.0 - wrong as f64
}
