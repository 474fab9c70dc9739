use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]])
}

/// Ordered points joined by straight segments (voxel units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline {
    pub points: Vec<Point>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("polyline needs at least one point".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Minimum distance from `p` to any segment (or the single point).
    pub fn distance(&self, p: Point) -> f64 {
        match self.points.as_slice() {
            [] => f64::INFINITY,
            [a] => dist(p, *a),
            pts => pts.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
        }
    }

    /// Point at arc-length fraction `s` in `[0, 1]`.
    pub fn point_at_fraction(&self, s: f64) -> Point {
        let total = self.length();
        if self.points.len() == 1 || total == 0.0 {
            return self.points[0];
        }
        let target = s.clamp(0.0, 1.0) * total;
        let mut walked = 0.0;
        for w in self.points.windows(2) {
            let seg = dist(w[0], w[1]);
            if walked + seg >= target && seg > 0.0 {
                let t = (target - walked) / seg;
                return [0, 1, 2].map(|i| w[0][i] + t * (w[1][i] - w[0][i]));
            }
            walked += seg;
        }
        *self.points.last().expect("non-empty")
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    }

    pub fn reversed(&self) -> Self {
        Self { points: self.points.iter().rev().copied().collect() }
    }

    pub fn translated(&self, by: Point) -> Self {
        Self { points: self.points.iter().map(|p| [p[0] + by[0], p[1] + by[1], p[2] + by[2]]).collect() }
    }
}
