//! From-scratch 1D convolutional network: layer kernels, sequential
//! network with reverse-mode gradients, optimizers and the training loop.

mod layers;
mod network;
pub mod ops;
mod optim;
mod tensor;
mod train;

pub use layers::{format_architecture, parse_architecture, Affine, BatchNorm, FeatureShape, Layer, LayerSpec};
pub use network::{default_architecture, Network};
pub use ops::{
    batchnorm1d, conv1d_forward, dropout, maxpool1d, relu, softmax, softmax_cross_entropy, Mode,
};
pub use optim::{Optimizer, OptimizerState};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainHistory};
