//! Minimal dense/convolutional network engine with analytic gradients.

pub mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;

pub use layers::{log_softmax, selu, softmax_in_place, LayerSpec, SELU_ALPHA, SELU_LAMBDA};
pub use network::{ForwardCache, Gradients, Network, ParamGrads};
pub use optim::{
    accuracy, adam_step, cross_entropy, train_classifier, AdamConfig, AdamState, EpochStats,
    TrainConfig,
};
pub use tensor::{argmax, Tensor};
