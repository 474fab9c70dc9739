use crate::error::{Error, Result};

use super::geometry::{dist, Point, Polyline};
use super::skeleton::principal_axis;

/// Samples in a fitted catheter polyline.
pub const POLYLINE_SAMPLES: usize = 100;

const COINCIDENT: f64 = 1e-9;

fn check_distinct(p: &[Point; 3]) -> Result<()> {
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if dist(p[i], p[j]) < COINCIDENT {
            return Err(Error::Degenerate(format!("control points {i} and {j} coincide at {:?}", p[i])));
        }
    }
    Ok(())
}

/// Sort three points by their projection on the triple's principal axis,
/// oriented so the first point is lexicographically below the last.
pub fn rank_control_points(p: [Point; 3]) -> Result<[Point; 3]> {
    check_distinct(&p)?;
    let (mean, axis) = principal_axis(&p);
    let proj = |q: Point| (q[0] - mean[0]) * axis[0] + (q[1] - mean[1]) * axis[1] + (q[2] - mean[2]) * axis[2];
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| proj(p[a]).total_cmp(&proj(p[b])));
    let mut ranked = order.map(|i| p[i]);
    if ranked[0].partial_cmp(&ranked[2]) == Some(std::cmp::Ordering::Greater) {
        ranked.reverse();
    }
    Ok(ranked)
}

/// Natural cubic spline through three points, chord-length parameterized.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalSpline {
    points: [Point; 3],
    knots: [f64; 3],
    /// Second derivative at the middle knot (zero at both ends).
    m1: Point,
}

impl NaturalSpline {
    pub fn new(points: [Point; 3]) -> Result<Self> {
        check_distinct(&points)?;
        let h0 = dist(points[0], points[1]);
        let h1 = dist(points[1], points[2]);
        let m1 = [0, 1, 2].map(|i| {
            3.0 * ((points[2][i] - points[1][i]) / h1 - (points[1][i] - points[0][i]) / h0) / (h0 + h1)
        });
        Ok(Self { points, knots: [0.0, h0, h0 + h1], m1 })
    }

    pub fn knots(&self) -> [f64; 3] {
        self.knots
    }

    /// Position at chord parameter `t` in `[0, knots[2]]`.
    pub fn eval(&self, t: f64) -> Point {
        let seg = usize::from(t > self.knots[1]);
        let (a, b) = (self.knots[seg], self.knots[seg + 1]);
        let h = b - a;
        let (ma, mb) = if seg == 0 { ([0.0; 3], self.m1) } else { (self.m1, [0.0; 3]) };
        let (pa, pb) = (self.points[seg], self.points[seg + 1]);
        let (l, r) = (b - t, t - a);
        [0, 1, 2].map(|i| {
            ma[i] * l.powi(3) / (6.0 * h)
                + mb[i] * r.powi(3) / (6.0 * h)
                + (pa[i] / h - ma[i] * h / 6.0) * l
                + (pb[i] / h - mb[i] * h / 6.0) * r
        })
    }

    /// `n` samples at uniform chord parameters from the first knot to the last.
    pub fn sample(&self, n: usize) -> Polyline {
        let total = self.knots[2];
        let pts = (0..n)
            .map(|j| if n == 1 { self.points[0] } else { self.eval(total * j as f64 / (n - 1) as f64) })
            .collect();
        Polyline { points: pts }
    }
}

/// The catheter polyline through an ordered triple.
pub fn fit_spline(ordered: [Point; 3]) -> Result<Polyline> {
    Ok(NaturalSpline::new(ordered)?.sample(POLYLINE_SAMPLES))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_collinear_points() {
        let r = rank_control_points([[2.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(r, [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let again = rank_control_points(r).unwrap();
        assert_eq!(again, r);
        assert!(rank_control_points([[1.0; 3], [1.0; 3], [0.0; 3]]).is_err());
    }

    #[test]
    fn interpolates_and_keeps_lines_straight() {
        let p = [[0.0; 3], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]];
        let s = NaturalSpline::new(p).unwrap();
        for (k, q) in s.knots().iter().zip(p) {
            let e = s.eval(*k);
            assert!(dist(e, q) < 1e-9, "{e:?} vs {q:?}");
        }
        let line = fit_spline([[0.0; 3], [1.0, 2.0, 3.0], [3.0, 6.0, 9.0]]).unwrap();
        assert_eq!(line.len(), POLYLINE_SAMPLES);
        for q in &line.points {
            let t = q[0] / 3.0;
            assert!(dist(*q, [3.0 * t, 6.0 * t, 9.0 * t]) < 1e-9);
        }
        assert!(line.points.windows(2).all(|w| dist(w[0], w[1]) > 0.0));
    }
}
