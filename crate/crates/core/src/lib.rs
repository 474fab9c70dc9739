//! Catheter segmentation in 3D ultrasound with a direction-fused fully
//! convolutional network, and catheter localization by sparse-plus-dense
//! RANSAC spline fitting.
//!
//! Module map:
//! - [`volume`]: voxel grids, file format, normalization, patch extraction
//! - [`slicer`]: tri-axial plane images, feature stacking and fusion, tiling
//! - [`tensor`]: reverse-mode autodiff, convolution kernels, Adam
//! - [`dffcn`]: network, direction-fused forward pass, sampling, training
//! - [`localizer`]: connected components, skeletons, splines, RANSAC
//! - [`metrics`]: overlap, average Hausdorff, skeleton and endpoint errors
//! - [`phantom`]: synthetic tube-in-speckle volumes
//! - [`experiment`]: cross-validation and gap sweeps built from the above

#![allow(clippy::needless_range_loop)]

pub mod dffcn;
pub mod error;
pub mod experiment;
pub mod localizer;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod slicer;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
