//! Voxel grids, the raw+JSON volume file format, intensity normalization and
//! padded patch extraction.
//!
//! All grids are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

/// Scalar 3D grid with physical spacing (millimeters per voxel).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    spacing_mm: [f64; 3],
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(dims: Dims, spacing_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing_mm)?;
        if data.len() != voxel_count(dims) {
            return Err(Error::Shape(format!(
                "volume {dims:?} needs {} voxels, got {}",
                voxel_count(dims),
                data.len()
            )));
        }
        Ok(Self { dims, spacing_mm, data })
    }

    pub fn filled(dims: Dims, spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing_mm, vec![value; voxel_count(dims)])
    }

    pub fn from_fn(
        dims: Dims,
        spacing_mm: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing_mm, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_cubic(&self) -> bool {
        self.dims[0] == self.dims[1] && self.dims[1] == self.dims[2]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f32) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = value;
    }

    /// Intensity with coordinates clamped into the grid (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, z: i64) -> f32 {
        let c = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        self.get(c(x, self.dims[0]), c(y, self.dims[1]), c(z, self.dims[2]))
    }

    /// Binarize at `threshold` (voxels `>= threshold` become 1).
    pub fn threshold(&self, threshold: f32) -> Mask3 {
        Mask3 {
            dims: self.dims,
            labels: self.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }
}

/// Binary label grid; 1 marks catheter voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask3 {
    dims: Dims,
    labels: Vec<u8>,
}

impl Mask3 {
    pub fn new(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        check_dims(dims)?;
        if labels.len() != voxel_count(dims) {
            return Err(Error::Shape(format!(
                "mask {dims:?} needs {} voxels, got {}",
                voxel_count(dims),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("mask label {bad} is not 0 or 1")));
        }
        Ok(Self { dims, labels })
    }

    pub fn empty(dims: Dims) -> Result<Self> {
        Self::new(dims, vec![0; voxel_count(dims)])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        check_dims(dims)?;
        let mut labels = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    labels.push(u8::from(f(x, y, z)));
                }
            }
        }
        Ok(Self { dims, labels })
    }

    /// Mask with exactly the listed voxels set.
    pub fn from_voxels(dims: Dims, voxels: &[[usize; 3]]) -> Result<Self> {
        let mut mask = Self::empty(dims)?;
        for &[x, y, z] in voxels {
            if x >= dims[0] || y >= dims[1] || z >= dims[2] {
                return Err(Error::Geometry(format!("voxel {:?} outside {dims:?}", [x, y, z])));
            }
            mask.set(x, y, z, true);
        }
        Ok(mask)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.labels[linear_index(self.dims, x, y, z)] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.labels[i] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Coordinates of positive voxels in linear order.
    pub fn positives(&self) -> Vec<[usize; 3]> {
        let [nx, ny, _] = self.dims;
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| [i % nx, (i / nx) % ny, i / (nx * ny)])
            .collect()
    }

    pub fn to_volume(&self, spacing_mm: [f64; 3]) -> Result<Volume3> {
        Volume3::new(self.dims, spacing_mm, self.labels.iter().map(|&l| f32::from(l)).collect())
    }
}

/// Core N³ tile and the M³ context region centered on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub core_origin: [usize; 3],
    pub core_size: usize,
    pub outer_origin: [i64; 3],
    pub outer_size: usize,
}

impl PatchRegion {
    pub fn centered(core_origin: [usize; 3], core_size: usize, outer_size: usize) -> Result<Self> {
        if core_size == 0 || core_size > outer_size {
            return Err(Error::InvalidArgument(format!(
                "patch sizes need 0 < N <= M, got N={core_size}, M={outer_size}"
            )));
        }
        let margin = ((outer_size - core_size) / 2) as i64;
        Ok(Self {
            core_origin,
            core_size,
            outer_origin: core_origin.map(|c| c as i64 - margin),
            outer_size,
        })
    }

    /// Offset of the core inside the outer region.
    pub fn margin(&self) -> usize {
        (self.outer_size - self.core_size) / 2
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
}

/// Sample encoding in the `.raw` file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32Le,
    U8,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::U8 => "u8",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f32le" => Ok(Dtype::F32Le),
            "u8" => Ok(Dtype::U8),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    fn bytes(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::U8 => 1,
        }
    }
}

/// `(header.json, data.raw)` paths for a volume given either file or the
/// bare stem.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let add = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (add("json"), add("raw"))
}

fn read_raw(path: &Path) -> Result<(Header, Dtype, Vec<u8>)> {
    let (json_path, raw_path) = volume_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::Header { path: json_path.clone(), source: e })?;
    check_dims(header.dims)?;
    check_spacing(header.spacing_mm)?;
    let dtype = Dtype::parse(&header.dtype)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = voxel_count(header.dims) * dtype.bytes();
    if bytes.len() != expected {
        return Err(Error::DataSizeMismatch { expected, found: bytes.len() });
    }
    Ok((header, dtype, bytes))
}

fn write_raw(path: &Path, dims: Dims, spacing_mm: [f64; 3], dtype: Dtype, bytes: &[u8]) -> Result<()> {
    let (json_path, raw_path) = volume_paths(path);
    let header = Header { dims, spacing_mm, dtype: dtype.name().to_string() };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Read a volume; `u8` samples are promoted to reals without rescaling.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let (header, dtype, bytes) = read_raw(path.as_ref())?;
    let data = match dtype {
        Dtype::F32Le => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::U8 => bytes.iter().map(|&b| f32::from(b)).collect(),
    };
    Volume3::new(header.dims, header.spacing_mm, data)
}

/// Write a volume as `f32le`.
pub fn save_volume(vol: &Volume3, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = vol.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(path.as_ref(), vol.dims, vol.spacing_mm, Dtype::F32Le, &bytes)
}

/// Read a mask stored as `u8` (or `f32le`) with values in {0, 1}, together
/// with its spacing.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(Mask3, [f64; 3])> {
    let (header, dtype, bytes) = read_raw(path.as_ref())?;
    let labels: Vec<u8> = match dtype {
        Dtype::U8 => bytes,
        Dtype::F32Le => bytes
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v == 0.0 {
                    0
                } else if v == 1.0 {
                    1
                } else {
                    2
                }
            })
            .collect(),
    };
    Ok((Mask3::new(header.dims, labels)?, header.spacing_mm))
}

pub fn save_mask(mask: &Mask3, spacing_mm: [f64; 3], path: impl AsRef<Path>) -> Result<()> {
    check_spacing(spacing_mm)?;
    write_raw(path.as_ref(), mask.dims, spacing_mm, Dtype::U8, &mask.labels)
}

/// Affine min-max rescale to [0, 1]; constant volumes map to zeros.
pub fn normalize(vol: &Volume3) -> Volume3 {
    let (lo, hi) = vol
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = f64::from(hi) - f64::from(lo);
    let data = if range > 0.0 {
        vol.data
            .iter()
            .map(|&v| ((f64::from(v) - f64::from(lo)) / range) as f32)
            .collect()
    } else {
        vec![0.0; vol.data.len()]
    };
    Volume3 { dims: vol.dims, spacing_mm: vol.spacing_mm, data }
}

/// Crop the M³ outer region of `region`; voxels outside the volume replicate
/// the nearest boundary plane.
pub fn extract_patch(vol: &Volume3, region: &PatchRegion) -> Result<Volume3> {
    let dims = vol.dims;
    for a in 0..3 {
        if region.core_origin[a] + region.core_size > dims[a] {
            return Err(Error::Geometry(format!(
                "core region at {:?} (N={}) exceeds volume {dims:?}",
                region.core_origin, region.core_size
            )));
        }
    }
    let m = region.outer_size;
    let [ox, oy, oz] = region.outer_origin;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let xs: Vec<usize> = (0..m as i64).map(|i| clamp(ox + i, dims[0])).collect();
    let mut data = Vec::with_capacity(m * m * m);
    for k in 0..m as i64 {
        let z = clamp(oz + k, dims[2]);
        for j in 0..m as i64 {
            let y = clamp(oy + j, dims[1]);
            let row = dims[0] * (y + dims[1] * z);
            data.extend(xs.iter().map(|&x| vol.data[row + x]));
        }
    }
    Volume3::new([m; 3], vol.spacing_mm, data)
}

/// Same crop for label grids (used for training labels).
pub fn extract_mask_patch(mask: &Mask3, region: &PatchRegion) -> Result<Mask3> {
    let vol = mask.to_volume([1.0; 3])?;
    let patch = extract_patch(&vol, region)?;
    Mask3::new(patch.dims, patch.data.iter().map(|&v| v as u8).collect())
}
