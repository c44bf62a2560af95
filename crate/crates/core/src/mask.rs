//! Binary mask operations: thresholding, connected-component labeling,
//! quality control and morphological dilation.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Row-major binary mask; pixel values are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask { width, height, pixels: vec![0; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(CoreError::DimensionMismatch(format!(
                "mask buffer {} != {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(CoreError::InvalidConfig("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.contains(&1)
    }

    /// Tight bounding box of the foreground as inclusive
    /// `(x_min, y_min, x_max, y_max)`, or None for an empty mask.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == 1 {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }

    /// Write as a single-channel PNG with foreground 255, background 0.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.pixels.iter().map(|&p| if p == 1 { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer sized to dimensions");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        img.save(path).map_err(|e| CoreError::image(path, e))
    }

    /// Read a mask image; any pixel above 127 counts as foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| CoreError::image(path, e))?.into_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.into_raw().into_iter().map(|p| u8::from(p > 127)).collect();
        Ok(BinaryMask { width: w as usize, height: h as usize, pixels })
    }
}

/// Pixel connectivity for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    Eight,
}

/// Statistics of one connected foreground region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub label: usize,
    pub area: usize,
    /// Inclusive (x_min, y_min, x_max, y_max).
    pub bbox: (usize, usize, usize, usize),
    pub centroid: (f64, f64),
}

/// Threshold a probability map into a binary mask.
///
/// The comparison is strict: a pixel becomes foreground only when its value
/// exceeds the threshold, so a pixel exactly at the threshold stays
/// background.
pub fn binarize(prob_map: &[f32], width: usize, height: usize, threshold: f32) -> Result<BinaryMask> {
    if prob_map.len() != width * height {
        return Err(CoreError::DimensionMismatch(format!(
            "probability map {} != {width}x{height}",
            prob_map.len()
        )));
    }
    let pixels = prob_map.iter().map(|&p| u8::from(p > threshold)).collect();
    Ok(BinaryMask { width, height, pixels })
}

/// Label maximal connected foreground regions.
///
/// Labels are assigned in raster-scan order of each region's first pixel,
/// starting at 1.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<RegionStats> {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0usize; w * h];
    let mut regions: Vec<RegionStats> = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) == 0 || labels[y * w + x] != 0 {
                continue;
            }
            let label = regions.len() + 1;
            let mut area = 0usize;
            let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
            let (mut sx, mut sy) = (0f64, 0f64);
            stack.push((x, y));
            labels[y * w + x] = label;
            while let Some((cx, cy)) = stack.pop() {
                area += 1;
                sx += cx as f64;
                sy += cy as f64;
                x0 = x0.min(cx);
                y0 = y0.min(cy);
                x1 = x1.max(cx);
                y1 = y1.max(cy);
                let neighbors: &[(i64, i64)] = match connectivity {
                    Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
                    Connectivity::Eight => &[
                        (-1, -1),
                        (0, -1),
                        (1, -1),
                        (-1, 0),
                        (1, 0),
                        (-1, 1),
                        (0, 1),
                        (1, 1),
                    ],
                };
                for (dx, dy) in neighbors {
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) == 1 && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = label;
                        stack.push((nx, ny));
                    }
                }
            }
            regions.push(RegionStats {
                label,
                area,
                bbox: (x0, y0, x1, y1),
                centroid: (sx / area as f64, sy / area as f64),
            });
        }
    }
    regions
}

/// QC acceptance thresholds, all expressed as fractions of the image area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcPolicy {
    /// Components smaller than this are discarded as noise before counting.
    pub small_component_ignore_fraction: f64,
    pub min_area_fraction: f64,
    pub max_area_fraction: f64,
    pub connectivity: Connectivity,
}

impl Default for QcPolicy {
    fn default() -> Self {
        QcPolicy {
            small_component_ignore_fraction: 0.002,
            min_area_fraction: 0.005,
            max_area_fraction: 0.95,
            connectivity: Connectivity::Eight,
        }
    }
}

impl QcPolicy {
    /// A policy that accepts any non-empty mask; useful for identity tests.
    pub fn accept_all() -> Self {
        QcPolicy {
            small_component_ignore_fraction: 0.0,
            min_area_fraction: 0.0,
            max_area_fraction: 1.0,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcReason {
    Ok,
    MultiRegion,
    EmptyMask,
    AreaTooSmall,
    AreaTooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcStatusKind {
    Accepted,
    Rejected,
}

/// Accept/reject decision for one generated mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub status: QcStatusKind,
    pub reason: QcReason,
}

impl QcVerdict {
    pub fn accepted(&self) -> bool {
        self.status == QcStatusKind::Accepted
    }

    fn ok() -> Self {
        QcVerdict { status: QcStatusKind::Accepted, reason: QcReason::Ok }
    }

    fn rejected(reason: QcReason) -> Self {
        debug_assert!(reason != QcReason::Ok);
        QcVerdict { status: QcStatusKind::Rejected, reason }
    }
}

/// Decide whether a mask localizes a single plausible lesion.
///
/// Components below the noise threshold are ignored; the mask is accepted
/// exactly when one component survives and its area fraction lies within the
/// policy bounds.
pub fn qc_mask(mask: &BinaryMask, policy: &QcPolicy) -> QcVerdict {
    let image_area = (mask.width * mask.height) as f64;
    let regions = connected_components(mask, policy.connectivity);
    if regions.is_empty() {
        return QcVerdict::rejected(QcReason::EmptyMask);
    }
    let surviving: Vec<&RegionStats> = regions
        .iter()
        .filter(|r| r.area as f64 >= policy.small_component_ignore_fraction * image_area)
        .collect();
    match surviving.len() {
        0 => QcVerdict::rejected(QcReason::AreaTooSmall),
        1 => {
            let frac = surviving[0].area as f64 / image_area;
            if frac < policy.min_area_fraction {
                QcVerdict::rejected(QcReason::AreaTooSmall)
            } else if frac > policy.max_area_fraction {
                QcVerdict::rejected(QcReason::AreaTooLarge)
            } else {
                QcVerdict::ok()
            }
        }
        _ => QcVerdict::rejected(QcReason::MultiRegion),
    }
}

/// Morphological dilation with a square structuring element of side
/// `2*radius + 1`, applied `iterations` times. Foreground never shrinks.
///
/// The square element is separable, so each iteration runs a horizontal then
/// a vertical max filter.
pub fn dilate(mask: &BinaryMask, radius: usize, iterations: usize) -> BinaryMask {
    assert!(radius >= 1, "dilation radius must be at least 1");
    let (w, h) = (mask.width, mask.height);
    let mut current = mask.pixels.clone();
    let mut scratch = vec![0u8; w * h];
    for _ in 0..iterations {
        // horizontal pass
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                scratch[y * w + x] = u8::from(current[y * w + lo..=y * w + hi].contains(&1));
            }
        }
        // vertical pass
        for x in 0..w {
            for y in 0..h {
                let lo = y.saturating_sub(radius);
                let hi = (y + radius).min(h - 1);
                let mut v = 0;
                for yy in lo..=hi {
                    if scratch[yy * w + x] == 1 {
                        v = 1;
                        break;
                    }
                }
                current[y * w + x] = v;
            }
        }
    }
    BinaryMask { width: w, height: h, pixels: current }
}
