//! Semantic segmentation with stacked ReNet layers.
//!
//! A model is a convolutional stem, a stack of ReNet layers (four GRU
//! sweeps over a patch grid each), transposed-convolution upsampling back to
//! the input resolution, and a per-pixel softmax classifier. Everything is
//! implemented on a small dense [`Tensor`] type with a reverse-mode
//! [`Tape`](autodiff::Tape) for training.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{build_model, Model, ModelConfig};
pub use tensor::{Scalar, Tensor};
pub use training::{LossConfig, TrainConfig};
