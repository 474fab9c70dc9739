//! From a binary segmentation to a catheter curve: clustering, per-cluster
//! skeletons (the sparse volume), and sparse-plus-dense RANSAC spline fitting.

mod components;
mod geometry;
mod ransac;
mod skeleton;
mod spline;

pub use components::{connected_components, Clusters};
pub use geometry::{dist, point_segment_distance, Point, Polyline};
pub use ransac::{localize, spd_ransac, spd_ransac_traced, CatheterModel, RansacConfig, DEFAULT_INLIER_THRESHOLD, DEFAULT_ITERS};
pub use skeleton::{extract_sparse, principal_axis, skeleton_polyline, SparseVolume};
pub use spline::{fit_spline, rank_control_points, NaturalSpline, POLYLINE_SAMPLES};
