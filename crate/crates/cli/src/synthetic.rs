//! Synthetic dermatoscopy-style fixture: elliptical "lesions" on a noisy
//! skin-tone background, with ground-truth masks and class labels whose hue
//! encodes the class. Small enough to drive every pipeline stage on CPU in
//! seconds, structured enough that the models can actually learn it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use dermpipe_core::BaseClass;

pub struct FixturePaths {
    pub root: PathBuf,
    /// Metadata with image ids only (segmentation-style source).
    pub isic_metadata: PathBuf,
    /// Metadata with image ids and class labels (classification source).
    pub ham_metadata: PathBuf,
}

/// Lesion fill color per class; distinct hues keep classes separable.
fn class_color(class: BaseClass) -> [f32; 3] {
    match class {
        BaseClass::Akiec => [200.0, 60.0, 60.0],
        BaseClass::Bcc => [170.0, 40.0, 120.0],
        BaseClass::Bkl => [120.0, 90.0, 40.0],
        BaseClass::Df => [90.0, 140.0, 60.0],
        BaseClass::Mel => [60.0, 50.0, 50.0],
        BaseClass::Nv => [150.0, 110.0, 80.0],
        BaseClass::Vasc => [80.0, 80.0, 200.0],
    }
}

/// Class spread over `n` images: every class appears at least twice.
fn class_sequence(n: usize) -> Vec<BaseClass> {
    let mut out = Vec::with_capacity(n);
    for class in BaseClass::ALL {
        out.push(class);
        out.push(class);
    }
    let mut i = 0usize;
    while out.len() < n {
        // pad with the two majority-ish classes
        out.push(if i.is_multiple_of(3) { BaseClass::Mel } else { BaseClass::Nv });
        i += 1;
    }
    out.truncate(n);
    out
}

/// Write `n` images (`size` x `size`), their masks and the two metadata CSVs.
pub fn generate_fixture(dir: &Path, n: usize, size: usize, seed: u64) -> Result<FixturePaths> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = class_sequence(n);

    let mut isic_csv = String::from("image_id\n");
    let mut ham_csv = String::from("image_id,dx\n");

    for (i, class) in classes.iter().enumerate() {
        let id = format!("synth_{i:04}");
        let cx = rng.random_range(size as f32 * 0.3..size as f32 * 0.7);
        let cy = rng.random_range(size as f32 * 0.3..size as f32 * 0.7);
        let rx = rng.random_range(size as f32 * 0.12..size as f32 * 0.22);
        let ry = rng.random_range(size as f32 * 0.12..size as f32 * 0.22);
        let color = class_color(*class);

        let mut img = image::RgbImage::new(size as u32, size as u32);
        let mut mask = image::GrayImage::new(size as u32, size as u32);
        for y in 0..size {
            for x in 0..size {
                let dx = (x as f32 - cx) / rx;
                let dy = (y as f32 - cy) / ry;
                let inside = dx * dx + dy * dy <= 1.0;
                let noise = rng.random_range(-12.0f32..12.0);
                let px = if inside {
                    [
                        (color[0] + noise).clamp(0.0, 255.0) as u8,
                        (color[1] + noise).clamp(0.0, 255.0) as u8,
                        (color[2] + noise).clamp(0.0, 255.0) as u8,
                    ]
                } else {
                    // skin-tone background
                    [
                        (225.0 + noise).clamp(0.0, 255.0) as u8,
                        (190.0 + noise).clamp(0.0, 255.0) as u8,
                        (170.0 + noise).clamp(0.0, 255.0) as u8,
                    ]
                };
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
                if inside {
                    mask.put_pixel(x as u32, y as u32, image::Luma([255]));
                }
            }
        }
        let img_path = dir.join(format!("{id}.png"));
        img.save(&img_path).map_err(|e| dermpipe_core::CoreError::image(&img_path, e))?;
        let mask_path = dir.join(format!("{id}_segmentation.png"));
        mask.save(&mask_path).map_err(|e| dermpipe_core::CoreError::image(&mask_path, e))?;

        isic_csv.push_str(&format!("{id}\n"));
        ham_csv.push_str(&format!("{id},{}\n", class.name()));
    }

    let isic_metadata = dir.join("isic_metadata.csv");
    let ham_metadata = dir.join("ham_metadata.csv");
    dermpipe_core::fsutil::write_atomic(&isic_metadata, isic_csv.as_bytes())?;
    dermpipe_core::fsutil::write_atomic(&ham_metadata, ham_csv.as_bytes())?;

    Ok(FixturePaths { root: dir.to_path_buf(), isic_metadata, ham_metadata })
}
