//! Encoder/decoder segmentation network with skip connections.
//!
//! The encoder halves the spatial resolution `depth` times while doubling
//! channel counts from `primary_filters`; the decoder mirrors it with
//! transposed convolutions and skip concatenation. A single dropout sits at
//! the bottleneck and the head is a 1x1 convolution with a sigmoid, producing
//! one lesion-probability map at the input resolution.

use burn::module::Module;
use burn::nn::conv::{Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig};
use burn::nn::pool::{MaxPool2d, MaxPool2dConfig};
use burn::nn::{BatchNorm, BatchNormConfig, Dropout, DropoutConfig, PaddingConfig2d};
use burn::tensor::activation::{relu, sigmoid};
use burn::tensor::backend::Backend;
use burn::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// Segmenter hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub height: usize,
    pub width: usize,
    /// Number of contraction blocks.
    pub depth: usize,
    pub primary_filters: usize,
    pub dropout_rate: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig { height: 224, width: 320, depth: 5, primary_filters: 32, dropout_rate: 0.4 }
    }
}

impl SegmenterConfig {
    /// A reduced configuration for fast CPU runs.
    pub fn reduced(size: usize) -> Self {
        SegmenterConfig { height: size, width: size, depth: 3, primary_filters: 8, dropout_rate: 0.4 }
    }

    pub fn validate(&self) -> Result<()> {
        let stride = 1usize << self.depth;
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(stride)
            || !self.width.is_multiple_of(stride)
        {
            return Err(NnError::NotDivisible {
                height: self.height,
                width: self.width,
                depth: self.depth,
            });
        }
        if self.primary_filters < 1 {
            return Err(NnError::InvalidConfig("primary_filters must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidConfig("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Encoder output channels per contraction block.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.primary_filters << i).collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.primary_filters << self.depth
    }
}

/// Two 3x3 convolutions, each followed by batch norm and ReLU.
#[derive(Module, Debug)]
pub struct ConvBlock<B: Backend> {
    conv1: Conv2d<B>,
    bn1: BatchNorm<B, 2>,
    conv2: Conv2d<B>,
    bn2: BatchNorm<B, 2>,
}

impl<B: Backend> ConvBlock<B> {
    fn init(in_channels: usize, out_channels: usize, device: &B::Device) -> Self {
        let conv = |cin: usize, cout: usize| {
            Conv2dConfig::new([cin, cout], [3, 3])
                .with_padding(PaddingConfig2d::Same)
                .init::<B>(device)
        };
        ConvBlock {
            conv1: conv(in_channels, out_channels),
            bn1: BatchNormConfig::new(out_channels).init::<B, 2>(device),
            conv2: conv(out_channels, out_channels),
            bn2: BatchNormConfig::new(out_channels).init::<B, 2>(device),
        }
    }

    fn forward(&self, x: Tensor<B, 4>) -> Tensor<B, 4> {
        let x = relu(self.bn1.forward(self.conv1.forward(x)));
        relu(self.bn2.forward(self.conv2.forward(x)))
    }
}

/// The segmentation network.
#[derive(Module, Debug)]
pub struct UNet<B: Backend> {
    encoders: Vec<ConvBlock<B>>,
    pool: MaxPool2d,
    bottleneck: ConvBlock<B>,
    bottleneck_dropout: Dropout,
    ups: Vec<ConvTranspose2d<B>>,
    decoders: Vec<ConvBlock<B>>,
    head: Conv2d<B>,
}

/// Build the network described by `config`.
pub fn build_segmenter<B: Backend>(config: &SegmenterConfig, device: &B::Device) -> Result<UNet<B>> {
    config.validate()?;
    let channels = config.encoder_channels();

    let mut encoders = Vec::with_capacity(config.depth);
    let mut in_ch = 3usize;
    for &out_ch in &channels {
        encoders.push(ConvBlock::init(in_ch, out_ch, device));
        in_ch = out_ch;
    }

    let bottleneck_ch = config.bottleneck_channels();
    let bottleneck = ConvBlock::init(in_ch, bottleneck_ch, device);

    let mut ups = Vec::with_capacity(config.depth);
    let mut decoders = Vec::with_capacity(config.depth);
    let mut ch = bottleneck_ch;
    for &skip_ch in channels.iter().rev() {
        ups.push(
            ConvTranspose2dConfig::new([ch, skip_ch], [2, 2])
                .with_stride([2, 2])
                .init::<B>(device),
        );
        decoders.push(ConvBlock::init(skip_ch * 2, skip_ch, device));
        ch = skip_ch;
    }

    Ok(UNet {
        encoders,
        pool: MaxPool2dConfig::new([2, 2]).with_strides([2, 2]).init(),
        bottleneck,
        bottleneck_dropout: DropoutConfig::new(config.dropout_rate).init(),
        ups,
        decoders,
        head: Conv2dConfig::new([config.primary_filters, 1], [1, 1]).init::<B>(device),
    })
}

impl<B: Backend> UNet<B> {
    /// Probability map in [0, 1] with the same spatial size as the input.
    pub fn forward(&self, input: Tensor<B, 4>) -> Tensor<B, 4> {
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = input;
        for enc in &self.encoders {
            h = enc.forward(h);
            skips.push(h.clone());
            h = self.pool.forward(h);
        }
        h = self.bottleneck_dropout.forward(self.bottleneck.forward(h));
        for (up, dec) in self.ups.iter().zip(self.decoders.iter()) {
            let skip = skips.pop().expect("one skip per decoder");
            h = up.forward(h);
            h = dec.forward(Tensor::cat(vec![skip, h], 1));
        }
        sigmoid(self.head.forward(h))
    }
}
