//! Light-field saliency detection toolkit.
//!
//! A light field is packed into its micro-lens image, encoded by a small
//! convolutional front end into a 3-channel map, and passed to an
//! attention-based 2-D saliency detector. The crate also carries the
//! training loop, evaluation metrics, dataset handling, and a CPU
//! benchmark.

pub mod bench;
pub mod data;
pub mod detector;
pub mod error;
pub mod fee;
pub mod lightfield;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
