//! Backend aliases. Training runs on the autodiff-wrapped ndarray backend;
//! inference uses the plain backend, which disables dropout and freezes
//! batch-norm statistics.

use burn::backend::{Autodiff, NdArray};

pub type Infer = NdArray<f32>;
pub type Train = Autodiff<Infer>;

pub type Device = burn::backend::ndarray::NdArrayDevice;

pub fn device() -> Device {
    Device::Cpu
}

/// Seed both backends' global generators.
pub fn seed(seed: u64) {
    use burn::tensor::backend::Backend;
    <Infer as Backend>::seed(seed);
    <Train as Backend>::seed(seed);
}
