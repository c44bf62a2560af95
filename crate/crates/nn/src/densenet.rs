//! Densely connected classification backbone with a compact custom head.
//!
//! The backbone follows the standard densely-connected layout: a 7x7 stem,
//! four dense blocks joined by compressing transitions, and a final batch
//! norm. The default configuration is the 121-layer variant (growth 32,
//! blocks 6/12/24/16, compression 0.5) whose feature dimension is 1024.
//!
//! The head is fixed by construction: global average pooling, a 256-unit
//! fully connected layer with ReLU, batch normalization, dropout, and the
//! output layer (sigmoid for one unit, softmax otherwise).

use burn::module::Module;
use burn::nn::conv::{Conv2d, Conv2dConfig};
use burn::nn::pool::{
    AdaptiveAvgPool2d, AdaptiveAvgPool2dConfig, AvgPool2d, AvgPool2dConfig, MaxPool2d,
    MaxPool2dConfig,
};
use burn::nn::{BatchNorm, BatchNormConfig, Dropout, DropoutConfig, Linear, LinearConfig, PaddingConfig2d};
use burn::record::{FullPrecisionSettings, NamedMpkFileRecorder};
use burn::tensor::activation::{relu, sigmoid, softmax};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{NnError, Result};
use dermpipe_core::TaskId;

/// Backbone topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub init_features: usize,
    pub growth_rate: usize,
    pub block_layers: Vec<usize>,
    /// Bottleneck width multiplier inside each dense layer.
    pub bn_size: usize,
    /// Channel compression applied by each transition.
    pub compression: f64,
}

impl BackboneConfig {
    /// The 121-layer variant.
    pub fn densenet121() -> Self {
        BackboneConfig {
            init_features: 64,
            growth_rate: 32,
            block_layers: vec![6, 12, 24, 16],
            bn_size: 4,
            compression: 0.5,
        }
    }

    /// A small variant for CPU smoke runs.
    pub fn reduced() -> Self {
        BackboneConfig {
            init_features: 16,
            growth_rate: 8,
            block_layers: vec![2, 2],
            bn_size: 4,
            compression: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_layers.is_empty() {
            return Err(NnError::InvalidConfig("need at least one dense block".into()));
        }
        if self.init_features == 0 || self.growth_rate == 0 || self.bn_size == 0 {
            return Err(NnError::InvalidConfig("backbone sizes must be positive".into()));
        }
        if !(0.0 < self.compression && self.compression <= 1.0) {
            return Err(NnError::InvalidConfig("compression must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Channel count entering the head.
    pub fn feature_dim(&self) -> usize {
        let mut c = self.init_features;
        for (i, &layers) in self.block_layers.iter().enumerate() {
            c += layers * self.growth_rate;
            if i + 1 < self.block_layers.len() {
                c = (c as f64 * self.compression).floor() as usize;
            }
        }
        c
    }
}

/// Head topology; output arity decides sigmoid vs softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub fc_units: usize,
    pub dropout_rate: f64,
    pub output_units: usize,
}

impl HeadConfig {
    pub fn binary() -> Self {
        HeadConfig { fc_units: 256, dropout_rate: 0.25, output_units: 1 }
    }

    pub fn multiclass(classes: usize) -> Self {
        HeadConfig { fc_units: 256, dropout_rate: 0.25, output_units: classes }
    }
}

/// Total parameter count of the head as burn counts it: both linear layers
/// plus the four per-unit batch-norm tensors (gamma, beta and the two running
/// statistics).
pub fn head_param_count(feature_dim: usize, head: &HeadConfig) -> usize {
    let fc1 = feature_dim * head.fc_units + head.fc_units;
    let bn = 4 * head.fc_units;
    let fc2 = head.fc_units * head.output_units + head.output_units;
    fc1 + bn + fc2
}

/// Full classifier configuration, including optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub input_size: usize,
    pub learning_rate: f64,
    /// Per-update learning-rate decay: lr_t = lr / (1 + decay * t).
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Path to a backbone weight record for transfer learning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained_weights: Option<PathBuf>,
    /// Allow training from randomly initialized weights.
    #[serde(default)]
    pub random_init: bool,
    /// Train only the head, keeping backbone weights fixed.
    #[serde(default)]
    pub freeze_backbone: bool,
    /// Random horizontal flips during training. Off by default.
    #[serde(default)]
    pub augment_flip: bool,
    /// Weight the loss inversely to class frequency. Off by default.
    #[serde(default)]
    pub class_weighting: bool,
    /// Fraction of the training split held out for best-weight selection.
    pub val_fraction: f64,
    /// Shuffle training batches each epoch.
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_true() -> bool {
    true
}

impl ClassifierConfig {
    /// Task presets: binary tasks train 30 epochs at batch 16 and lr 1e-4;
    /// the seven-class task trains 50 epochs at batch 32 and lr 6e-4.
    pub fn for_task(task: TaskId) -> Self {
        let (head, epochs, batch_size, learning_rate) = if task.is_binary() {
            (HeadConfig::binary(), 30, 16, 1e-4)
        } else {
            (HeadConfig::multiclass(task.num_labels()), 50, 32, 6e-4)
        };
        ClassifierConfig {
            backbone: BackboneConfig::densenet121(),
            head,
            input_size: 224,
            learning_rate,
            lr_decay: 1e-6,
            epochs,
            batch_size,
            pretrained_weights: None,
            random_init: false,
            freeze_backbone: false,
            augment_flip: false,
            class_weighting: false,
            val_fraction: 0.1,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.head.output_units == 0 || self.head.fc_units == 0 {
            return Err(NnError::InvalidConfig("head sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head.dropout_rate) {
            return Err(NnError::InvalidConfig("head dropout must lie in [0, 1)".into()));
        }
        if self.input_size == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::InvalidConfig("training sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(NnError::InvalidConfig("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Module, Debug)]
struct DenseLayer<B: Backend> {
    bn1: BatchNorm<B, 2>,
    conv1: Conv2d<B>,
    bn2: BatchNorm<B, 2>,
    conv2: Conv2d<B>,
}

impl<B: Backend> DenseLayer<B> {
    fn init(in_channels: usize, growth: usize, bn_size: usize, device: &B::Device) -> Self {
        DenseLayer {
            bn1: BatchNormConfig::new(in_channels).init::<B, 2>(device),
            conv1: Conv2dConfig::new([in_channels, bn_size * growth], [1, 1])
                .with_bias(false)
                .init::<B>(device),
            bn2: BatchNormConfig::new(bn_size * growth).init::<B, 2>(device),
            conv2: Conv2dConfig::new([bn_size * growth, growth], [3, 3])
                .with_padding(PaddingConfig2d::Same)
                .with_bias(false)
                .init::<B>(device),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let new = self.conv1.forward(relu(self.bn1.forward(x.clone())));
        let new = self.conv2.forward(relu(self.bn2.forward(new)));
        Tensor::cat(vec![x, new], 1)
    }
}

#[derive(Module, Debug)]
struct Transition<B: Backend> {
    bn: BatchNorm<B, 2>,
    conv: Conv2d<B>,
    pool: AvgPool2d,
}

impl<B: Backend> Transition<B> {
    fn init(in_channels: usize, out_channels: usize, device: &B::Device) -> Self {
        Transition {
            bn: BatchNormConfig::new(in_channels).init::<B, 2>(device),
            conv: Conv2dConfig::new([in_channels, out_channels], [1, 1])
                .with_bias(false)
                .init::<B>(device),
            pool: AvgPool2dConfig::new([2, 2]).with_strides([2, 2]).init(),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        self.pool.forward(self.conv.forward(relu(self.bn.forward(x))))
    }
}

/// Feature extractor: stem, dense blocks, transitions, final norm.
#[derive(Module, Debug)]
pub struct DenseFeatures<B: Backend> {
    stem_conv: Conv2d<B>,
    stem_bn: BatchNorm<B, 2>,
    stem_pool: MaxPool2d,
    layers: Vec<DenseLayer<B>>,
    transitions: Vec<Transition<B>>,
    /// Transition index after each block prefix; encodes block boundaries.
    block_ends: Vec<usize>,
    final_bn: BatchNorm<B, 2>,
}

impl<B: Backend> DenseFeatures<B> {
    fn init(config: &BackboneConfig, device: &B::Device) -> Self {
        let mut layers = Vec::new();
        let mut transitions = Vec::new();
        let mut block_ends = Vec::new();
        let mut c = config.init_features;
        for (i, &n_layers) in config.block_layers.iter().enumerate() {
            for _ in 0..n_layers {
                layers.push(DenseLayer::init(c, config.growth_rate, config.bn_size, device));
                c += config.growth_rate;
            }
            block_ends.push(layers.len());
            if i + 1 < config.block_layers.len() {
                let out = (c as f64 * config.compression).floor() as usize;
                transitions.push(Transition::init(c, out, device));
                c = out;
            }
        }
        DenseFeatures {
            stem_conv: Conv2dConfig::new([3, config.init_features], [7, 7])
                .with_stride([2, 2])
                .with_padding(PaddingConfig2d::Explicit(3, 3))
                .with_bias(false)
                .init::<B>(device),
            stem_bn: BatchNormConfig::new(config.init_features).init::<B, 2>(device),
            stem_pool: MaxPool2dConfig::new([3, 3])
                .with_strides([2, 2])
                .with_padding(PaddingConfig2d::Explicit(1, 1))
                .init(),
            layers,
            transitions,
            block_ends,
            final_bn: BatchNormConfig::new(c).init::<B, 2>(device),
        }
    }

    pub fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let mut h = self.stem_pool.forward(relu(self.stem_bn.forward(self.stem_conv.forward(x))));
        let mut layer_idx = 0usize;
        for (block, &end) in self.block_ends.iter().enumerate() {
            while layer_idx < end {
                h = self.layers[layer_idx].forward(h);
                layer_idx += 1;
            }
            if block < self.transitions.len() {
                h = self.transitions[block].forward(h);
            }
        }
        relu(self.final_bn.forward(h))
    }
}

/// Classification head: pool, dense+ReLU, batch norm, dropout, dense output.
#[derive(Module, Debug)]
pub struct Head<B: Backend> {
    gap: AdaptiveAvgPool2d,
    fc1: Linear<B>,
    bn: BatchNorm<B, 0>,
    dropout: Dropout,
    fc2: Linear<B>,
}

impl<B: Backend> Head<B> {
    fn init(feature_dim: usize, config: &HeadConfig, device: &B::Device) -> Self {
        Head {
            gap: AdaptiveAvgPool2dConfig::new([1, 1]).init(),
            fc1: LinearConfig::new(feature_dim, config.fc_units).init::<B>(device),
            bn: BatchNormConfig::new(config.fc_units).init::<B, 0>(device),
            dropout: DropoutConfig::new(config.dropout_rate).init(),
            fc2: LinearConfig::new(config.fc_units, config.output_units).init::<B>(device),
        }
    }

    fn forward(&self, features: Tensor<B, 4>) -> Tensor<B, 2> {
        let [batch, channels, _, _] = features.dims();
        let pooled: Tensor<B, 2> = self.gap.forward(features).reshape([batch, channels]);
        let h = relu(self.fc1.forward(pooled));
        let h = self.dropout.forward(self.bn.forward(h));
        let logits = self.fc2.forward(h);
        let [_, out] = logits.dims();
        if out == 1 {
            sigmoid(logits)
        } else {
            softmax(logits, 1)
        }
    }

    /// Layer sequence read back from the live module.
    pub fn describe(&self) -> Vec<String> {
        let [fc1_in, fc1_out] = self.fc1.weight.dims();
        let [fc2_in, fc2_out] = self.fc2.weight.dims();
        let activation = if fc2_out == 1 { "sigmoid" } else { "softmax" };
        vec![
            "global_avg_pool".to_string(),
            format!("linear({fc1_in} -> {fc1_out})"),
            "relu".to_string(),
            format!("batch_norm({fc1_out})"),
            format!("dropout({})", self.dropout.prob),
            format!("linear({fc2_in} -> {fc2_out})"),
            activation.to_string(),
        ]
    }
}

/// Backbone plus head.
#[derive(Module, Debug)]
pub struct DenseNetClassifier<B: Backend> {
    pub features: DenseFeatures<B>,
    pub head: Head<B>,
    /// Detach features before the head so only the head trains.
    freeze_backbone: bool,
}

impl<B: Backend> DenseNetClassifier<B> {
    /// Class probabilities: `[batch, 1]` sigmoid scores for binary heads,
    /// `[batch, n]` softmax rows otherwise.
    pub fn forward_probs(&self, x: Tensor<B, 4>) -> Tensor<B, 2> {
        let features = self.features.forward(x);
        let features = if self.freeze_backbone { features.detach() } else { features };
        self.head.forward(features)
    }

    pub fn head_params(&self) -> usize {
        self.head.num_params()
    }
}

/// Build the classifier; loads pretrained backbone weights when configured.
///
/// Without a weight file the build fails unless `random_init` is set.
pub fn build_classifier<B: Backend>(
    config: &ClassifierConfig,
    device: &B::Device,
) -> Result<DenseNetClassifier<B>> {
    config.validate()?;
    let mut features = DenseFeatures::init(&config.backbone, device);
    match (&config.pretrained_weights, config.random_init) {
        (Some(path), _) => {
            if !weight_file_exists(path) {
                return Err(NnError::MissingPretrained(path.clone()));
            }
            let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
            features = features
                .load_file(path.clone(), &recorder, device)
                .map_err(|e| NnError::CorruptWeights { path: path.clone(), msg: e.to_string() })?;
        }
        (None, true) => {}
        (None, false) => return Err(NnError::MissingPretrained(PathBuf::from("<unset>"))),
    }
    let head = Head::init(config.backbone.feature_dim(), &config.head, device);
    Ok(DenseNetClassifier { features, head, freeze_backbone: config.freeze_backbone })
}

/// Persist backbone weights for later transfer, e.g. from a converted
/// checkpoint or a finished training run.
pub fn save_backbone<B: Backend>(features: DenseFeatures<B>, path: &Path) -> Result<()> {
    let recorder = NamedMpkFileRecorder::<FullPrecisionSettings>::new();
    features
        .save_file(path, &recorder)
        .map_err(|e| NnError::CorruptWeights { path: path.to_path_buf(), msg: e.to_string() })
}

fn weight_file_exists(base: &Path) -> bool {
    // the named-record format stores to `<base>.mpk`
    base.is_file() || base.with_extension("mpk").is_file()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{device, Infer};
    use burn::tensor::Distribution;

    #[test]
    fn densenet121_feature_dim() {
        let cfg = BackboneConfig::densenet121();
        assert_eq!(cfg.feature_dim(), 1024);
    }

    #[test]
    fn reduced_backbone_feature_dim() {
        let cfg = BackboneConfig::reduced();
        // 16 + 2*8 = 32 -> compress 16 -> +2*8 = 32
        assert_eq!(cfg.feature_dim(), 32);
    }

    #[test]
    fn task_presets_match_protocol() {
        let binary = ClassifierConfig::for_task(TaskId::MelVsNv);
        assert_eq!(binary.epochs, 30);
        assert_eq!(binary.batch_size, 16);
        assert!((binary.learning_rate - 1e-4).abs() < 1e-12);
        assert_eq!(binary.head.output_units, 1);

        let seven = ClassifierConfig::for_task(TaskId::SevenClass);
        assert_eq!(seven.epochs, 50);
        assert_eq!(seven.batch_size, 32);
        assert!((seven.learning_rate - 6e-4).abs() < 1e-12);
        assert_eq!(seven.head.output_units, 7);
        assert!((seven.lr_decay - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn missing_pretrained_without_override_fails() {
        let cfg = ClassifierConfig::for_task(TaskId::MelVsNv);
        let err = build_classifier::<Infer>(&cfg, &device()).unwrap_err();
        assert!(matches!(err, NnError::MissingPretrained(_)));

        let mut cfg = ClassifierConfig::for_task(TaskId::MelVsNv);
        cfg.pretrained_weights = Some(PathBuf::from("/nonexistent/backbone"));
        assert!(matches!(
            build_classifier::<Infer>(&cfg, &device()),
            Err(NnError::MissingPretrained(_))
        ));
    }

    fn small_config(output_units: usize) -> ClassifierConfig {
        ClassifierConfig {
            backbone: BackboneConfig::reduced(),
            head: HeadConfig { fc_units: 32, dropout_rate: 0.25, output_units },
            input_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.0,
            epochs: 1,
            batch_size: 4,
            pretrained_weights: None,
            random_init: true,
            freeze_backbone: false,
            augment_flip: false,
            class_weighting: false,
            val_fraction: 0.0,
            shuffle: true,
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = small_config(7);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        let x = Tensor::<Infer, 4>::random([3, 3, 32, 32], Distribution::Uniform(-1.0, 1.0), &device());
        let probs = model.forward_probs(x);
        assert_eq!(probs.dims(), [3, 7]);
        let sums: Vec<f32> = probs.sum_dim(1).into_data().to_vec().unwrap();
        for s in sums {
            assert!((s - 1.0).abs() < 1e-6, "row sums to {s}");
        }
    }

    #[test]
    fn binary_output_in_unit_interval() {
        let cfg = small_config(1);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        let x = Tensor::<Infer, 4>::random([2, 3, 32, 32], Distribution::Uniform(-1.0, 1.0), &device());
        let probs = model.forward_probs(x);
        assert_eq!(probs.dims(), [2, 1]);
        let vals: Vec<f32> = probs.into_data().to_vec().unwrap();
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn head_sequence_and_param_count() {
        let cfg = small_config(7);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        assert_eq!(
            model.head.describe(),
            vec![
                "global_avg_pool",
                "linear(32 -> 32)",
                "relu",
                "batch_norm(32)",
                "dropout(0.25)",
                "linear(32 -> 7)",
                "softmax",
            ]
        );
        let expected = head_param_count(cfg.backbone.feature_dim(), &cfg.head);
        assert_eq!(model.head_params(), expected);
    }

    #[test]
    fn backbone_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("backbone");
        let cfg = small_config(1);
        let model = build_classifier::<Infer>(&cfg, &device()).unwrap();
        save_backbone(model.features.clone(), &base).unwrap();

        let mut cfg2 = small_config(1);
        cfg2.random_init = false;
        cfg2.pretrained_weights = Some(base);
        let loaded = build_classifier::<Infer>(&cfg2, &device()).unwrap();

        let x = Tensor::<Infer, 4>::random([1, 3, 32, 32], Distribution::Uniform(-1.0, 1.0), &device());
        let a: Vec<f32> = model.features.forward(x.clone()).into_data().to_vec().unwrap();
        let b: Vec<f32> = loaded.features.forward(x).into_data().to_vec().unwrap();
        assert_eq!(a, b);
    }
}
