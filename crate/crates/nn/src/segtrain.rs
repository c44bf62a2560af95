//! Segmenter training and inference.
//!
//! Training minimizes binary cross-entropy with Adam, monitors validation
//! pixel accuracy, reduces the learning rate once on a plateau and stops on a
//! second plateau. The best validation weights are checkpointed as they
//! appear.

use burn::optim::{AdamConfig, GradientsParams, Optimizer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::backend::{device, Infer, Train};
use crate::checkpoint::{save_seg_checkpoint, CheckpointRecord};
use crate::data::{bce_loss, binary_accuracy, image_batch, mask_batch, SegSample};
use crate::error::{NnError, Result};
use crate::schedule::{EpochRecord, PlateauDriver, ScheduleAction, TrainingHistory, TrainSchedule};
use crate::unet::{build_segmenter, SegmenterConfig, UNet};
use dermpipe_core::preprocess::{resize_plane, resize_rgb, RgbPlanes};

/// Train on `train`, select weights on `val`, and persist the best
/// checkpoint under `out_dir/segmenter.{mpk,json}` with the history CSV next
/// to it.
pub fn train_segmenter(
    train: &[SegSample],
    val: &[SegSample],
    config: &SegmenterConfig,
    schedule: &TrainSchedule,
    seed: u64,
    out_dir: &Path,
) -> Result<(CheckpointRecord, TrainingHistory)> {
    config.validate()?;
    schedule.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptySet("training".into()));
    }
    if val.is_empty() {
        return Err(NnError::EmptySet("validation".into()));
    }
    check_sample_dims(train, config)?;
    check_sample_dims(val, config)?;

    crate::backend::seed(seed);
    let device = device();
    let mut model = build_segmenter::<Train>(config, &device)?;
    let mut optimizer = AdamConfig::new().init::<Train, UNet<Train>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut driver = PlateauDriver::new(schedule);
    let mut history = TrainingHistory::default();
    let base = out_dir.join("segmenter");
    let mut best: Option<CheckpointRecord> = None;

    let (h, w) = (config.height, config.width);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..schedule.max_epochs {
        let lr = driver.lr();
        order.shuffle(&mut rng);

        let mut train_loss = 0.0f64;
        let mut train_acc = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&SegSample> = chunk.iter().map(|&i| &train[i]).collect();
            let x = image_batch::<Train>(&batch, h, w, &device);
            let t = mask_batch::<Train>(&batch, h, w, &device);
            let probs = model.forward(x);
            let loss = bce_loss(probs.clone(), t.clone());
            let loss_value = loss.clone().into_scalar() as f64;
            let grads = GradientsParams::from_grads(loss.backward(), &model);
            model = optimizer.step(lr, model, grads);
            train_loss += loss_value * batch.len() as f64;
            train_acc += binary_accuracy(probs, t) * batch.len() as f64;
            seen += chunk.len();
        }
        train_loss /= seen as f64;
        train_acc /= seen as f64;

        let (val_loss, val_acc) = {
            use burn::module::AutodiffModule;
            eval_epoch(&model.valid(), val, config, schedule.batch_size)
        };

        history.push(EpochRecord { epoch, train_loss, val_loss, train_acc, val_acc, lr });

        let (improved, action) = driver.observe(epoch, val_acc);
        if improved {
            best = Some(save_seg_checkpoint(&model, config, schedule, epoch, val_acc, &base)?);
        }
        match action {
            ScheduleAction::Continue | ScheduleAction::ReduceLr { .. } => {}
            ScheduleAction::Stop => break,
        }
    }

    history.save_csv(&out_dir.join("segmenter_history.csv"))?;
    let record = best.expect("at least one epoch ran, so a checkpoint exists");
    debug_assert_eq!(Some(record.monitored_value), history.max_val_acc());
    Ok((record, history))
}

fn check_sample_dims(samples: &[SegSample], config: &SegmenterConfig) -> Result<()> {
    let image_len = 3 * config.height * config.width;
    let mask_len = config.height * config.width;
    let bad: Vec<String> = samples
        .iter()
        .filter(|s| s.image.len() != image_len || s.mask.len() != mask_len)
        .map(|s| s.id.clone())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(NnError::SizeMismatch { ids: bad })
    }
}

fn eval_epoch(
    model: &UNet<Infer>,
    samples: &[SegSample],
    config: &SegmenterConfig,
    batch_size: usize,
) -> (f64, f64) {
    let device = device();
    let mut loss = 0.0f64;
    let mut acc = 0.0f64;
    for chunk in samples.chunks(batch_size) {
        let batch: Vec<&SegSample> = chunk.iter().collect();
        let x = image_batch::<Infer>(&batch, config.height, config.width, &device);
        let t = mask_batch::<Infer>(&batch, config.height, config.width, &device);
        let probs = model.forward(x);
        loss += bce_loss(probs.clone(), t.clone()).into_scalar() as f64
            * batch.len() as f64;
        acc += binary_accuracy(probs, t) * batch.len() as f64;
    }
    (loss / samples.len() as f64, acc / samples.len() as f64)
}

/// Pixel accuracy, Dice and IoU of one thresholded prediction.
pub fn seg_scores(pred: &[f32], truth: &[f32], threshold: f32) -> (f64, f64, f64) {
    assert_eq!(pred.len(), truth.len());
    let mut correct = 0usize;
    let mut inter = 0usize;
    let mut pred_area = 0usize;
    let mut truth_area = 0usize;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let p = p > threshold;
        let t = t > threshold;
        correct += usize::from(p == t);
        inter += usize::from(p && t);
        pred_area += usize::from(p);
        truth_area += usize::from(t);
    }
    let n = pred.len() as f64;
    let accuracy = correct as f64 / n;
    let dice = if pred_area + truth_area == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (pred_area + truth_area) as f64
    };
    let union = pred_area + truth_area - inter;
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    (accuracy, dice, iou)
}

/// Mean segmentation quality over a test set at threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub n_images: usize,
    pub pixel_accuracy: f64,
    pub dice: f64,
    pub iou: f64,
}

pub fn evaluate_segmenter(
    model: &UNet<Infer>,
    config: &SegmenterConfig,
    test: &[SegSample],
) -> Result<SegEvalReport> {
    if test.is_empty() {
        return Err(NnError::EmptySet("test".into()));
    }
    check_sample_dims(test, config)?;
    let device = device();
    let mut acc = 0.0;
    let mut dice = 0.0;
    let mut iou = 0.0;
    for chunk in test.chunks(8) {
        let batch: Vec<&SegSample> = chunk.iter().collect();
        let x = image_batch::<Infer>(&batch, config.height, config.width, &device);
        let probs: Vec<f32> = model.forward(x).into_data().to_vec().unwrap();
        let plane = config.height * config.width;
        for (i, sample) in batch.iter().enumerate() {
            let (a, d, j) = seg_scores(&probs[i * plane..(i + 1) * plane], &sample.mask, 0.5);
            acc += a;
            dice += d;
            iou += j;
        }
    }
    let n = test.len() as f64;
    Ok(SegEvalReport {
        n_images: test.len(),
        pixel_accuracy: acc / n,
        dice: dice / n,
        iou: iou / n,
    })
}

/// Lesion-probability map for one native-resolution image (values 0..=255).
///
/// The image is resampled to the model's input size for the forward pass and
/// the map is resampled back to the source resolution.
pub fn predict_prob_map(
    model: &UNet<Infer>,
    config: &SegmenterConfig,
    image: &RgbPlanes,
) -> Vec<f32> {
    predict_prob_maps(model, config, std::slice::from_ref(image)).pop().unwrap()
}

/// Batched probability maps, returned in input order.
pub fn predict_prob_maps(
    model: &UNet<Infer>,
    config: &SegmenterConfig,
    images: &[RgbPlanes],
) -> Vec<Vec<f32>> {
    let device = device();
    let plane = config.height * config.width;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(8) {
        let samples: Vec<SegSample> = chunk
            .iter()
            .map(|img| {
                let resized = resize_rgb(img, config.width, config.height);
                SegSample {
                    id: String::new(),
                    image: resized.data.iter().map(|v| v / 255.0).collect(),
                    mask: vec![],
                }
            })
            .collect();
        let refs: Vec<&SegSample> = samples.iter().collect();
        let x = image_batch::<Infer>(&refs, config.height, config.width, &device);
        let probs: Vec<f32> = model.forward(x).into_data().to_vec().unwrap();
        for (i, img) in chunk.iter().enumerate() {
            out.push(resize_plane(
                &probs[i * plane..(i + 1) * plane],
                config.width,
                config.height,
                img.width,
                img.height,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seg_scores_identity_and_complement() {
        let gt = vec![1.0, 0.0, 1.0, 0.0];
        let (acc, dice, iou) = seg_scores(&gt, &gt, 0.5);
        assert_eq!((acc, dice, iou), (1.0, 1.0, 1.0));

        let inv: Vec<f32> = gt.iter().map(|v| 1.0 - v).collect();
        let (acc, dice, _) = seg_scores(&inv, &gt, 0.5);
        assert_eq!(acc, 0.0);
        assert_eq!(dice, 0.0);
    }

    #[test]
    fn seg_scores_counted_case() {
        // 4x4 map with 12 of 16 pixels agreeing
        let mut pred = vec![0.0f32; 16];
        let mut truth = vec![0.0f32; 16];
        for i in 0..8 {
            pred[i] = 1.0;
            truth[i] = 1.0;
        }
        for p in pred.iter_mut().take(12).skip(8) {
            *p = 1.0; // false positives
        }
        let (acc, _, _) = seg_scores(&pred, &truth, 0.5);
        assert!((acc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_train_set_fails() {
        let cfg = SegmenterConfig { height: 16, width: 16, depth: 2, primary_filters: 2, dropout_rate: 0.0 };
        let dir = tempfile::tempdir().unwrap();
        let err = train_segmenter(&[], &[], &cfg, &TrainSchedule::default(), 0, dir.path());
        assert!(matches!(err, Err(NnError::EmptySet(_))));
    }

    #[test]
    fn mismatched_sample_listed_by_id() {
        let cfg = SegmenterConfig { height: 16, width: 16, depth: 2, primary_filters: 2, dropout_rate: 0.0 };
        let good = SegSample { id: "good".into(), image: vec![0.0; 3 * 256], mask: vec![0.0; 256] };
        let bad = SegSample { id: "bad".into(), image: vec![0.0; 3 * 100], mask: vec![0.0; 100] };
        let dir = tempfile::tempdir().unwrap();
        let err = train_segmenter(
            &[good.clone(), bad],
            &[good],
            &cfg,
            &TrainSchedule::default(),
            0,
            dir.path(),
        )
        .unwrap_err();
        match err {
            NnError::SizeMismatch { ids } => assert_eq!(ids, vec!["bad".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn prob_maps_native_size_and_order() {
        let cfg = SegmenterConfig { height: 16, width: 16, depth: 2, primary_filters: 2, dropout_rate: 0.0 };
        crate::backend::seed(5);
        let model = build_segmenter::<Infer>(&cfg, &device()).unwrap();
        let img_a = RgbPlanes::new(33, 21);
        let mut img_b = RgbPlanes::new(40, 40);
        for v in img_b.data.iter_mut() {
            *v = 200.0;
        }
        let maps = predict_prob_maps(&model, &cfg, &[img_a.clone(), img_b.clone()]);
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].len(), 33 * 21);
        assert_eq!(maps[1].len(), 40 * 40);
        assert!(maps.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
        // single-image path agrees with the batched path
        let single = predict_prob_map(&model, &cfg, &img_a);
        assert_eq!(single, maps[0]);
    }
}
