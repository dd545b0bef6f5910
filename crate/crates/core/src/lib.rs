//! Integrated acoustic scene classification, audio tagging and sound event
//! detection networks, with the supporting feature pipeline, training loop
//! and evaluation metrics.

pub mod audio;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod task;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
