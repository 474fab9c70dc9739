//! Tri-axial decomposition of cubic patches into 3-channel plane images,
//! reassembly of per-plane maps into feature volumes, and volume tiling.
//!
//! In-plane orientation follows a cyclic table: for the plane orthogonal to
//! axis `a`, image rows run along axis `(a + 1) % 3` and columns along axis
//! `(a + 2) % 3`.
//!
//! | axis | row | col |
//! |------|-----|-----|
//! | X    | y   | z   |
//! | Y    | z   | x   |
//! | Z    | x   | y   |
//!
//! With this table a cyclic relabelling of the patch axes maps the slices of
//! one axis onto the slices of another without any in-plane transpose, so
//! fused features commute with cyclic axis permutations for any per-plane
//! map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::volume::{voxel_count, Dims, PatchRegion, Volume3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Self::ALL.get(i).copied()
    }

    /// Grid axes that index image rows and columns.
    pub fn in_plane(self) -> (usize, usize) {
        let a = self.index();
        ((a + 1) % 3, (a + 2) % 3)
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidArgument(format!("unknown axis {s:?}"))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Grid coordinate of image pixel `(row, col)` on plane `k` of `axis`.
#[inline]
pub fn plane_voxel(axis: Axis, k: usize, row: usize, col: usize) -> [usize; 3] {
    let (r, c) = axis.in_plane();
    let mut p = [0; 3];
    p[axis.index()] = k;
    p[r] = row;
    p[c] = col;
    p
}

/// Plane indices `(k - d, k, k + d)` clamped to `[0, m)`.
pub fn channel_planes(k: usize, d: usize, m: usize) -> [usize; 3] {
    [k.saturating_sub(d), k, (k + d).min(m - 1)]
}

/// Per-axis sequence of 3-channel plane images, each stored `[3, M, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TriSliceStack<T> {
    pub axis: Axis,
    pub gap_d: usize,
    pub size: usize,
    pub images: Vec<Vec<T>>,
}

fn check_cubic(dims: Dims) -> Result<usize> {
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(Error::Shape(format!("patch must be cubic, got {dims:?}")));
    }
    Ok(dims[0])
}

/// Cut the `M` planes of `patch` orthogonal to `axis` into 3-channel images
/// built from planes `k - d`, `k`, `k + d`.
pub fn slice_axis<T: Real>(patch: &Volume3, axis: Axis, d: usize) -> Result<TriSliceStack<T>> {
    let m = check_cubic(patch.dims())?;
    if d >= m {
        return Err(Error::InvalidArgument(format!("gap d={d} must be < M={m}")));
    }
    let plane = |k: usize, out: &mut Vec<T>| {
        for row in 0..m {
            for col in 0..m {
                let [x, y, z] = plane_voxel(axis, k, row, col);
                out.push(T::of_f32(patch.get(x, y, z)));
            }
        }
    };
    let images = (0..m)
        .map(|k| {
            let mut img = Vec::with_capacity(3 * m * m);
            for p in channel_planes(k, d, m) {
                plane(p, &mut img);
            }
            img
        })
        .collect();
    Ok(TriSliceStack { axis, gap_d: d, size: m, images })
}

/// Channel-major feature grid `[F, M, M, M]`, spatially x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume<T> {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureVolume<T> {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Self { channels, size, data: vec![T::zero(); channels * size * size * size] }
    }

    #[inline]
    pub fn index(&self, f: usize, [x, y, z]: [usize; 3]) -> usize {
        let m = self.size;
        ((f * m + z) * m + y) * m + x
    }

    pub fn get(&self, f: usize, p: [usize; 3]) -> T {
        self.data[self.index(f, p)]
    }

    /// Single-channel feature volume as a `Volume3`.
    pub fn channel_volume(&self, f: usize, spacing_mm: [f64; 3]) -> Result<Volume3> {
        let n = self.size * self.size * self.size;
        Volume3::new(
            [self.size; 3],
            spacing_mm,
            self.data[f * n..(f + 1) * n].iter().map(|v| v.as_f32()).collect(),
        )
    }
}

/// Place per-plane maps (`[F, M, M]` each, plane order along `axis`) back at
/// their voxels: the inverse of the indexing in [`slice_axis`].
pub fn stack_features<T: Real>(per_plane: &[Vec<T>], channels: usize, axis: Axis) -> Result<FeatureVolume<T>> {
    let m = per_plane.len();
    if m == 0 {
        return Err(Error::Shape("no plane maps to stack".into()));
    }
    if let Some((k, bad)) = per_plane.iter().enumerate().find(|(_, p)| p.len() != channels * m * m) {
        return Err(Error::Shape(format!(
            "plane map {k} has {} values, expected {channels}x{m}x{m}",
            bad.len()
        )));
    }
    let mut out = FeatureVolume::zeros(channels, m);
    for (k, map) in per_plane.iter().enumerate() {
        for f in 0..channels {
            for row in 0..m {
                for col in 0..m {
                    let i = out.index(f, plane_voxel(axis, k, row, col));
                    out.data[i] = map[(f * m + row) * m + col];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`stack_features`]: cut a feature volume into per-plane maps.
pub fn unstack_features<T: Real>(vol: &FeatureVolume<T>, axis: Axis) -> Vec<Vec<T>> {
    let m = vol.size;
    (0..m)
        .map(|k| {
            let mut map = Vec::with_capacity(vol.channels * m * m);
            for f in 0..vol.channels {
                for row in 0..m {
                    for col in 0..m {
                        map.push(vol.get(f, plane_voxel(axis, k, row, col)));
                    }
                }
            }
            map
        })
        .collect()
}

/// Elementwise sum of the three per-axis feature volumes, each voxel summed
/// in ascending order of its three terms.
pub fn fuse<T: Real>(fx: &FeatureVolume<T>, fy: &FeatureVolume<T>, fz: &FeatureVolume<T>) -> Result<FeatureVolume<T>> {
    for other in [fy, fz] {
        if (other.channels, other.size) != (fx.channels, fx.size) {
            return Err(Error::Shape(format!(
                "cannot fuse feature volumes {}x{}^3 and {}x{}^3",
                fx.channels, fx.size, other.channels, other.size
            )));
        }
    }
    let data = fx
        .data
        .iter()
        .zip(&fy.data)
        .zip(&fz.data)
        .map(|((&a, &b), &c)| {
            // Ascending order makes the sum independent of which axis
            // contributed which term, so axis permutations commute exactly.
            let mut t = [a, b, c];
            t.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            t[0] + t[1] + t[2]
        })
        .collect();
    Ok(FeatureVolume { channels: fx.channels, size: fx.size, data })
}

fn axis_origins(dim: usize, n: usize) -> Vec<usize> {
    let mut origins: Vec<usize> = (0..dim / n).map(|i| i * n).collect();
    if !dim.is_multiple_of(n) {
        origins.push(dim - n);
    }
    origins
}

/// Cover `dims` with N³ cores, each centered in an M³ context region.
/// Order is x-fastest; when N does not divide a dimension the last tile
/// along it is aligned to the far edge.
pub fn tile(dims: Dims, n: usize, m: usize) -> Result<Vec<PatchRegion>> {
    if n == 0 || n > m {
        return Err(Error::InvalidArgument(format!("need 0 < N <= M, got N={n}, M={m}")));
    }
    if dims.iter().any(|&d| n > d) {
        return Err(Error::InvalidArgument(format!("N={n} exceeds volume dims {dims:?}")));
    }
    let [ox, oy, oz] = dims.map(|d| axis_origins(d, n));
    let mut regions = Vec::with_capacity(ox.len() * oy.len() * oz.len());
    for &z in &oz {
        for &y in &oy {
            for &x in &ox {
                regions.push(PatchRegion::centered([x, y, z], n, m)?);
            }
        }
    }
    Ok(regions)
}

/// Write the central N³ of each M³ patch prediction into its core region.
/// Later regions overwrite earlier ones where cores overlap.
pub fn stitch(predictions: &[(PatchRegion, Volume3)], dims: Dims) -> Result<Volume3> {
    let spacing = predictions
        .first()
        .map(|(_, v)| v.spacing_mm())
        .ok_or_else(|| Error::InvalidArgument("no patch predictions to stitch".into()))?;
    let mut out = Volume3::filled(dims, spacing, 0.0)?;
    let mut covered = vec![false; voxel_count(dims)];
    for (region, pred) in predictions {
        let (n, m) = (region.core_size, region.outer_size);
        if pred.dims() != [m; 3] {
            return Err(Error::Shape(format!("prediction {:?} does not match M={m}", pred.dims())));
        }
        let [cx, cy, cz] = region.core_origin;
        if cx + n > dims[0] || cy + n > dims[1] || cz + n > dims[2] {
            return Err(Error::Geometry(format!("region {region:?} outside {dims:?}")));
        }
        let off = region.margin();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (x, y, z) = (cx + i, cy + j, cz + k);
                    out.set(x, y, z, pred.get(off + i, off + j, off + k));
                    covered[crate::volume::linear_index(dims, x, y, z)] = true;
                }
            }
        }
    }
    if let Some(i) = covered.iter().position(|&c| !c) {
        return Err(Error::Geometry(format!("voxel {i} not covered by any patch")));
    }
    Ok(out)
}
