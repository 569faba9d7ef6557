//! Pseudo-domain generation for calibration training, target-domain
//! corruptions for evaluation, the procedural ShapesWorld segmentation
//! dataset, and the segmentation metrics (mIoU, ECE).

pub mod augment;
pub mod color_ops;
pub mod corrupt;
pub mod domains;
pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod ppm;
pub mod scenes;

pub use domains::{DomainKind, DomainSpec};
pub use error::{DataError, Result};
pub use image::Mask;
pub use scenes::Sample;
