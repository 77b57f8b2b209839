//! Micro deep-learning toolkit for facial landmark regression on thermal
//! images: reverse-mode autodiff, a catalog of convolutional and attention
//! models, wing-loss training, hyperparameter search, and activation
//! maximization.
//!
//! Everything numeric is generic over [`scalar::Scalar`]; the aliases below
//! pick `f64`, with `f32` variants for lighter runs.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hpo;
pub mod interpret;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autograd::Tape<f64>;
pub type Model = model::BuiltModel<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type TapeF32 = autograd::Tape<f32>;
pub type ModelF32 = model::BuiltModel<f32>;
