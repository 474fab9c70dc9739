use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_rng, stream};
use crate::volume::Mask3;

use super::components::connected_components;
use super::geometry::{Point, Polyline};
use super::skeleton::{extract_sparse, SparseVolume};
use super::spline::{fit_spline, rank_control_points};

pub const DEFAULT_INLIER_THRESHOLD: f64 = 3.0;
pub const DEFAULT_ITERS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iters: usize,
    /// Inlier distance to the polyline, voxels.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iters: DEFAULT_ITERS, threshold: DEFAULT_INLIER_THRESHOLD, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatheterModel {
    pub control_points: [Point; 3],
    pub polyline: Polyline,
    /// Dense voxels within `threshold` of the polyline.
    pub score: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl CatheterModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Header { path: path.to_path_buf(), source: e })
    }
}

fn count_inliers(dense: &[Point], line: &Polyline, thr: f64) -> usize {
    let (lo, hi) = line.bounds();
    let thr2 = thr * thr;
    dense
        .iter()
        .filter(|p| (0..3).all(|i| p[i] >= lo[i] - thr && p[i] <= hi[i] + thr))
        .filter(|&&p| {
            line.points.windows(2).any(|w| {
                let (a, b) = (w[0], w[1]);
                let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
                let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
                let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= thr2
            })
        })
        .count()
}

/// Sparse-plus-dense RANSAC that also returns every candidate's score
/// (0 for degenerate draws), in iteration order.
pub fn spd_ransac_traced(sparse: &SparseVolume, dense: &Mask3, cfg: &RansacConfig) -> Result<(CatheterModel, Vec<usize>)> {
    if sparse.len() < 3 {
        return Err(Error::NoCatheter(format!("need at least 3 skeleton points, found {}", sparse.len())));
    }
    if dense.is_empty() {
        return Err(Error::NoCatheter("dense volume has no voxels".into()));
    }
    let dense_pts: Vec<Point> = dense.positives().into_iter().map(|v| v.map(|x| x as f64)).collect();
    let mut best: Option<CatheterModel> = None;
    let mut scores = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let mut rng = child_rng(cfg.seed, stream::RANSAC, it as u64);
        let pick = index::sample(&mut rng, sparse.len(), 3);
        let triple = [0, 1, 2].map(|j| sparse.points[pick.index(j)]);
        let Ok(ranked) = rank_control_points(triple) else {
            scores.push(0);
            continue;
        };
        let polyline = fit_spline(ranked)?;
        let score = count_inliers(&dense_pts, &polyline, cfg.threshold);
        scores.push(score);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(CatheterModel { control_points: ranked, polyline, score, threshold: cfg.threshold, seed: cfg.seed });
        }
    }
    let model = best.ok_or_else(|| Error::Degenerate("every RANSAC draw was degenerate".into()))?;
    Ok((model, scores))
}

/// The highest-scoring spline over `cfg.iters` seeded draws of three
/// skeleton points; ties keep the first model reached.
pub fn spd_ransac(sparse: &SparseVolume, dense: &Mask3, cfg: &RansacConfig) -> Result<CatheterModel> {
    spd_ransac_traced(sparse, dense, cfg).map(|(m, _)| m)
}

/// Clustering, skeletons and RANSAC on a binary segmentation.
pub fn localize(mask: &Mask3, cfg: &RansacConfig) -> Result<CatheterModel> {
    if mask.is_empty() {
        return Err(Error::NoCatheter("segmentation is empty".into()));
    }
    let sparse = extract_sparse(&connected_components(mask))?;
    spd_ransac(&sparse, mask, cfg)
}
