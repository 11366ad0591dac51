//! Wavelet multi-stream graph-convolutional recurrent forecasting.
//!
//! Sensor series are split by a Haar wavelet pyramid into several streams,
//! each stream is encoded by a graph-convolutional GRU over its own learned
//! graph, the encoded streams are fused by a learnable inverse wavelet
//! transform, and a graph-convolutional GRU decoder rolls the fused sequence
//! forward into multi-step forecasts.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph_learning;
pub mod graph_ops;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
