use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Mask3;

use super::components::{connected_components, Clusters};
use super::geometry::{Point, Polyline};

/// Skeleton points of every cluster; the RANSAC sampling pool.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVolume {
    pub points: Vec<Point>,
    pub source_cluster: Vec<u32>,
}

impl SparseVolume {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Centroid and unit principal direction of a point set. The direction's
/// largest-magnitude component is made positive so the result is unique.
pub fn principal_axis(points: &[Point]) -> (Point, Point) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for i in 0..3 {
            mean[i] += p[i] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j] / n;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    let mut axis: Point = [v[0], v[1], v[2]];
    let big = (0..3).max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs())).expect("three components");
    if axis[big] < 0.0 {
        axis = axis.map(|c| -c);
    }
    (mean, axis)
}

fn project(p: Point, mean: Point, axis: Point) -> f64 {
    (p[0] - mean[0]) * axis[0] + (p[1] - mean[1]) * axis[1] + (p[2] - mean[2]) * axis[2]
}

/// Per cluster: project voxels on the dominant direction, cut the
/// projection into unit bins, and emit each bin's centroid in bin order.
pub fn extract_sparse(clusters: &Clusters) -> Result<SparseVolume> {
    if clusters.count == 0 {
        return Err(Error::NoCatheter("segmentation has no clusters".into()));
    }
    let mut out = SparseVolume::default();
    for (c, voxels) in clusters.members().into_iter().enumerate() {
        let pts: Vec<Point> = voxels.iter().map(|v| v.map(|x| x as f64)).collect();
        let label = c as u32 + 1;
        if pts.len() == 1 {
            out.points.push(pts[0]);
            out.source_cluster.push(label);
            continue;
        }
        let (mean, axis) = principal_axis(&pts);
        let t: Vec<f64> = pts.iter().map(|&p| project(p, mean, axis)).collect();
        let t0 = t.iter().copied().fold(f64::INFINITY, f64::min);
        let bins = t.iter().map(|&ti| (ti - t0).floor() as usize).max().unwrap_or(0) + 1;
        let mut sums = vec![([0.0; 3], 0usize); bins];
        for (p, &ti) in pts.iter().zip(&t) {
            let b = &mut sums[(ti - t0).floor() as usize];
            for i in 0..3 {
                b.0[i] += p[i];
            }
            b.1 += 1;
        }
        for (s, n) in sums.into_iter().filter(|(_, n)| *n > 0) {
            out.points.push(s.map(|v| v / n as f64));
            out.source_cluster.push(label);
        }
    }
    Ok(out)
}

/// Skeleton of a whole annotation mask ordered along its principal axis;
/// used as the reference curve for skeleton and endpoint errors.
pub fn skeleton_polyline(mask: &Mask3) -> Result<Polyline> {
    let sparse = extract_sparse(&connected_components(mask))?;
    let mut pts = sparse.points;
    if pts.len() > 1 {
        let (mean, axis) = principal_axis(&pts);
        pts.sort_by(|&a, &b| project(a, mean, axis).total_cmp(&project(b, mean, axis)));
    }
    Polyline::new(pts)
}
