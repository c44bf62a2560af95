//! Classifier fine-tuning and inference.
//!
//! Training runs a fixed number of epochs with RMSprop (smoothing 0.9, no
//! momentum, epsilon 1e-7) under per-update learning-rate decay
//! `lr_t = lr / (1 + decay * t)`, tracking the best validation accuracy and
//! checkpointing those weights.

use burn::optim::{GradientsParams, Optimizer, RmsPropConfig};
use burn::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::backend::{device, Infer, Train};
use crate::checkpoint::{save_clf_checkpoint, ClfSidecar};
use crate::data::{bce_loss, crop_batch, flip_horizontal, onehot_batch, ClfSample};
use crate::densenet::{build_classifier, ClassifierConfig, DenseNetClassifier};
use crate::error::{NnError, Result};
use crate::schedule::{EpochRecord, TrainingHistory};
use dermpipe_core::TaskId;

/// Per-update learning rate under the configured decay.
fn decayed_lr(initial: f64, decay: f64, step: usize) -> f64 {
    initial / (1.0 + decay * step as f64)
}

fn check_labels(train: &[ClfSample], task: TaskId) -> Result<()> {
    let grouping = task.grouping();
    for (idx, name) in grouping.labels.iter().enumerate() {
        if !train.iter().any(|s| s.label == idx) {
            return Err(NnError::MissingClass(name.to_string()));
        }
    }
    Ok(())
}

fn check_crop_dims(samples: &[ClfSample], size: usize) -> Result<()> {
    let expected = 3 * size * size;
    for s in samples {
        if s.pixels.len() != expected {
            return Err(NnError::WrongInputSize { expected, got: s.pixels.len() });
        }
    }
    Ok(())
}

/// Inverse-frequency class weights, normalized so the mean weight is 1.
fn class_weights(train: &[ClfSample], n_labels: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_labels];
    for s in train {
        counts[s.label] += 1;
    }
    let total = train.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total / (n_labels as f64 * c as f64) })
        .collect()
}

/// Fine-tune on `train`, select weights on `val`, persist the best checkpoint
/// under `out_dir/classifier.{mpk,json}` plus the history CSV.
pub fn train_classifier(
    train: &[ClfSample],
    val: &[ClfSample],
    config: &ClassifierConfig,
    task: TaskId,
    fold_index: Option<usize>,
    seed: u64,
    out_dir: &Path,
) -> Result<(ClfSidecar, TrainingHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptySet("training".into()));
    }
    if val.is_empty() {
        return Err(NnError::EmptySet("validation".into()));
    }
    check_labels(train, task)?;
    check_crop_dims(train, config.input_size)?;
    check_crop_dims(val, config.input_size)?;
    let n_labels = task.grouping().labels.len();
    if config.head.output_units != 1 && config.head.output_units != n_labels {
        return Err(NnError::InvalidConfig(format!(
            "head has {} outputs but task `{task}` has {n_labels} labels",
            config.head.output_units
        )));
    }

    crate::backend::seed(seed);
    let device = device();
    let mut model = build_classifier::<Train>(config, &device)?;
    let mut optimizer = RmsPropConfig::new()
        .with_alpha(0.9)
        .with_momentum(0.0)
        .with_epsilon(1e-7)
        .init::<Train, DenseNetClassifier<Train>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = config.class_weighting.then(|| class_weights(train, n_labels));

    let mut history = TrainingHistory::default();
    let base = out_dir.join("classifier");
    let mut best: Option<ClfSidecar> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut train_loss = 0.0;
        let mut train_correct = 0usize;
        let mut epoch_lr = decayed_lr(config.learning_rate, config.lr_decay, step);

        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ClfSample> = chunk.iter().map(|&i| &train[i]).collect();
            let flipped: Vec<Option<Vec<f32>>> = batch
                .iter()
                .map(|s| {
                    (config.augment_flip && rng.random_bool(0.5))
                        .then(|| flip_horizontal(&s.pixels, config.input_size))
                })
                .collect();
            let rows: Vec<&[f32]> = batch
                .iter()
                .zip(flipped.iter())
                .map(|(s, f)| f.as_deref().unwrap_or(&s.pixels))
                .collect();
            let x = crop_batch::<Train>(&rows, config.input_size, &device);
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let probs = model.forward_probs(x);

            let sample_weights = weights
                .as_ref()
                .map(|w| labels.iter().map(|&l| w[l] as f32).collect::<Vec<f32>>());
            let loss = batch_loss::<Train>(&probs, &labels, n_labels, sample_weights.as_deref());
            let loss_value = loss.clone().into_scalar() as f64;
            let lr = decayed_lr(config.learning_rate, config.lr_decay, step);
            epoch_lr = lr;
            let grads = GradientsParams::from_grads(loss.backward(), &model);
            model = optimizer.step(lr, model, grads);
            step += 1;

            train_loss += loss_value * batch.len() as f64;
            train_correct += count_correct(&probs.into_data().to_vec().unwrap(), &labels, config.head.output_units);
        }
        let train_loss = train_loss / train.len() as f64;
        let train_acc = train_correct as f64 / train.len() as f64;

        let (val_loss, val_acc) = {
            use burn::module::AutodiffModule;
            eval_epoch(&model.valid(), val, config, n_labels)
        };
        history.push(EpochRecord { epoch, train_loss, val_loss, train_acc, val_acc, lr: epoch_lr });

        if best.as_ref().is_none_or(|b| val_acc > b.best_val_metric) {
            best = Some(save_clf_checkpoint(&model, config, task, fold_index, epoch, val_acc, &base)?);
        }
    }

    history.save_csv(&out_dir.join("classifier_history.csv"))?;
    let sidecar = best.expect("at least one epoch ran");
    debug_assert_eq!(Some(sidecar.best_val_metric), history.max_val_acc());
    Ok((sidecar, history))
}

/// Loss for one batch of probability rows.
fn batch_loss<B: burn::tensor::backend::Backend>(
    probs: &Tensor<B, 2>,
    labels: &[usize],
    n_labels: usize,
    sample_weights: Option<&[f32]>,
) -> Tensor<B, 1> {
    let device = probs.device();
    let [batch, out] = probs.dims();
    if out == 1 {
        let targets: Vec<f32> = labels.iter().map(|&l| if l == 0 { 1.0 } else { 0.0 }).collect();
        let t = Tensor::<B, 2>::from_data(
            burn::tensor::TensorData::new(targets, [batch, 1]),
            &device,
        );
        match sample_weights {
            None => bce_loss(probs.clone(), t),
            Some(w) => {
                let eps = 1e-7;
                let p = probs.clone().clamp(eps, 1.0 - eps);
                let per = (t.clone() * p.clone().log() + (t.neg() + 1.0) * (p.neg() + 1.0).log()).neg();
                let wt = Tensor::<B, 2>::from_data(
                    burn::tensor::TensorData::new(w.to_vec(), [batch, 1]),
                    &device,
                );
                (per * wt).mean()
            }
        }
    } else {
        let onehot = onehot_batch::<B>(labels, n_labels, &device);
        let eps = 1e-7;
        let per = (onehot * probs.clone().clamp(eps, 1.0 - eps).log()).sum_dim(1).neg();
        match sample_weights {
            None => per.mean(),
            Some(w) => {
                let wt = Tensor::<B, 2>::from_data(
                    burn::tensor::TensorData::new(w.to_vec(), [batch, 1]),
                    &device,
                );
                (per * wt).mean()
            }
        }
    }
}

/// Count correct hard decisions in a flat probability buffer.
fn count_correct(probs: &[f32], labels: &[usize], output_units: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| {
            let row = &probs[i * output_units..(i + 1) * output_units];
            let pred = if output_units == 1 {
                if row[0] > 0.5 {
                    0
                } else {
                    1
                }
            } else {
                dermpipe_core::argmax(&row.iter().map(|&v| v as f64).collect::<Vec<f64>>())
            };
            pred == label
        })
        .count()
}

fn eval_epoch(
    model: &DenseNetClassifier<Infer>,
    samples: &[ClfSample],
    config: &ClassifierConfig,
    n_labels: usize,
) -> (f64, f64) {
    let device = device();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(config.batch_size) {
        let rows: Vec<&[f32]> = chunk.iter().map(|s| s.pixels.as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let x = crop_batch::<Infer>(&rows, config.input_size, &device);
        let probs = model.forward_probs(x);
        loss += batch_loss::<Infer>(&probs, &labels, n_labels, None).into_scalar() as f64
            * chunk.len() as f64;
        correct += count_correct(&probs.into_data().to_vec().unwrap(), &labels, config.head.output_units);
    }
    (loss / samples.len() as f64, correct as f64 / samples.len() as f64)
}

/// Class probabilities for a batch of preprocessed crops, in input order.
/// Binary heads yield one probability per crop (the positive class); softmax
/// heads yield a full row.
pub fn predict_proba(
    model: &DenseNetClassifier<Infer>,
    config: &ClassifierConfig,
    crops: &[Vec<f32>],
) -> Result<Vec<Vec<f64>>> {
    let expected = 3 * config.input_size * config.input_size;
    if let Some(bad) = crops.iter().find(|c| c.len() != expected) {
        return Err(NnError::WrongInputSize { expected, got: bad.len() });
    }
    let device = device();
    let out_units = config.head.output_units;
    let mut out = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(config.batch_size.max(1)) {
        let rows: Vec<&[f32]> = chunk.iter().map(|c| c.as_slice()).collect();
        let x = crop_batch::<Infer>(&rows, config.input_size, &device);
        let probs: Vec<f32> = model.forward_probs(x).into_data().to_vec().unwrap();
        for i in 0..chunk.len() {
            out.push(
                probs[i * out_units..(i + 1) * out_units]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Hard label index from a probability row.
///
/// Binary rows hold p(positive); the positive label has index 0 and wins only
/// when its probability strictly exceeds the threshold. Softmax rows decide
/// by argmax with the lowest index winning ties.
pub fn decide_label(probs: &[f64], threshold: f64) -> usize {
    if probs.len() == 1 {
        usize::from(!dermpipe_core::decide_binary(probs[0], threshold))
    } else {
        dermpipe_core::argmax(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_decay_schedule() {
        assert_eq!(decayed_lr(1e-4, 0.0, 100), 1e-4);
        let lr0 = decayed_lr(1e-4, 1e-6, 0);
        let lr1k = decayed_lr(1e-4, 1e-6, 1000);
        assert_eq!(lr0, 1e-4);
        assert!(lr1k < lr0);
        assert!((lr1k - 1e-4 / 1.001).abs() < 1e-12);
    }

    #[test]
    fn decide_label_rules() {
        assert_eq!(decide_label(&[0.7], 0.5), 0);
        assert_eq!(decide_label(&[0.5], 0.5), 1); // threshold not exceeded
        assert_eq!(decide_label(&[0.2], 0.5), 1);
        assert_eq!(decide_label(&[0.1, 0.2, 0.1, 0.1, 0.4, 0.05, 0.05], 0.5), 4);
        assert_eq!(decide_label(&[0.4, 0.1, 0.4, 0.1], 0.5), 0); // tie -> lowest index
    }

    #[test]
    fn class_weights_inverse_frequency() {
        let mk = |label: usize| ClfSample { id: String::new(), pixels: vec![], label };
        let train = vec![mk(0), mk(0), mk(0), mk(1)];
        let w = class_weights(&train, 2);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 4.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_named() {
        let cfg = test_config(1);
        let dir = tempfile::tempdir().unwrap();
        let s = ClfSample { id: "a".into(), pixels: vec![0.0; 3 * 32 * 32], label: 0 };
        let err = train_classifier(
            std::slice::from_ref(&s),
            std::slice::from_ref(&s),
            &cfg,
            TaskId::MelVsNv,
            None,
            0,
            dir.path(),
        )
        .unwrap_err();
        match err {
            NnError::MissingClass(name) => assert_eq!(name, "nevus"),
            other => panic!("unexpected {other}"),
        }
    }

    pub(crate) fn test_config(output_units: usize) -> ClassifierConfig {
        ClassifierConfig {
            backbone: crate::densenet::BackboneConfig::reduced(),
            head: crate::densenet::HeadConfig { fc_units: 32, dropout_rate: 0.0, output_units },
            input_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.0,
            epochs: 2,
            batch_size: 4,
            pretrained_weights: None,
            random_init: true,
            freeze_backbone: false,
            augment_flip: false,
            class_weighting: false,
            val_fraction: 0.0,
            shuffle: false,
        }
    }

    #[test]
    fn empty_prediction_batch() {
        let cfg = test_config(7);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        let out = predict_proba(&model, &cfg, &[]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn wrong_input_size_rejected() {
        let cfg = test_config(7);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        let err = predict_proba(&model, &cfg, &[vec![0.0; 17]]).unwrap_err();
        assert!(matches!(err, NnError::WrongInputSize { .. }));
    }

    #[test]
    fn prediction_is_deterministic() {
        let cfg = test_config(7);
        crate::backend::seed(11);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        let crops = vec![vec![0.3f32; 3 * 32 * 32], vec![-0.2f32; 3 * 32 * 32]];
        let a = predict_proba(&model, &cfg, &crops).unwrap();
        let b = predict_proba(&model, &cfg, &crops).unwrap();
        assert_eq!(a, b);
        for row in &a {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
