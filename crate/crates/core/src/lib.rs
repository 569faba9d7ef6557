//! Differentiable tensor core, calibrated normalization layers, the small
//! fully-convolutional segmentation network, and the checkpoint container.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod net;
pub mod norm;
pub mod rng;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, TensorId};
pub use tensor::{LabelBatch, Tensor};
