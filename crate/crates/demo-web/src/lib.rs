//! Browser bindings: generate a phantom, look at its tri-axial plane images,
//! and localize the catheter in a corrupted segmentation.

use dffcn_core::localizer::{localize, RansacConfig};
use dffcn_core::metrics::{endpoint_error, skeleton_error};
use dffcn_core::phantom::{generate, Phantom, PhantomConfig};
use dffcn_core::rng::rng_from;
use dffcn_core::slicer::{slice_axis, Axis};
use dffcn_core::volume::{normalize, Mask3, Volume3};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    phantom: Phantom,
    normalized: Volume3,
    spacing_mm: f64,
}

#[derive(Serialize)]
struct Localization {
    control_points: [[f64; 3]; 3],
    polyline: Vec<[f64; 3]>,
    truth: Vec<[f64; 3]>,
    score: usize,
    mask_voxels: usize,
    se_mm: f64,
    ee_mm: f64,
}

fn axis(i: usize) -> Result<Axis, String> {
    Axis::from_index(i).ok_or_else(|| format!("axis {i} is not 0, 1 or 2"))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u32, curvature: f64, distractors: usize) -> Result<Demo, String> {
        let cfg = PhantomConfig { dims: [size; 3], seed: seed.into(), curvature, n_distractors: distractors, ..PhantomConfig::default() };
        let phantom = generate(&cfg).map_err(|e| e.to_string())?;
        let normalized = normalize(&phantom.volume);
        Ok(Demo { phantom, normalized, spacing_mm: cfg.spacing_mm })
    }

    pub fn size(&self) -> usize {
        self.normalized.dims()[0]
    }

    /// Maximum-intensity projection along `axis`, `size × size` row-major
    /// over the two in-plane axes.
    pub fn projection(&self, axis_index: usize) -> Result<Vec<f32>, String> {
        let a = axis(axis_index)?;
        Ok(project(self.size(), a, |p| self.normalized.get(p[0], p[1], p[2]), f32::max, 0.0))
    }

    /// Projection of the truth mask: 1 where any voxel along the ray is
    /// catheter.
    pub fn mask_projection(&self, axis_index: usize) -> Result<Vec<u8>, String> {
        let a = axis(axis_index)?;
        let m = &self.phantom.mask;
        Ok(project(self.size(), a, |p| u8::from(m.get(p[0], p[1], p[2])), u8::max, 0))
    }

    /// The three-channel plane image at index `k` along `axis` with gap `d`:
    /// planes k-d, k and k+d (clamped), channel-major.
    pub fn plane_image(&self, axis_index: usize, k: usize, d: usize) -> Result<Vec<f32>, String> {
        let a = axis(axis_index)?;
        let stack = slice_axis::<f32>(&self.normalized, a, d).map_err(|e| e.to_string())?;
        stack.images.get(k).cloned().ok_or_else(|| format!("plane {k} is outside 0..{}", self.size()))
    }

    /// Drop a fraction of the catheter voxels, scatter `clutter` false
    /// positive cubes, then fit the catheter. Returns JSON with the fitted
    /// and true centerlines and their errors in millimetres.
    pub fn localize(&self, iters: usize, threshold: f64, seed: u32, dropout: f64, clutter: usize) -> Result<String, String> {
        let seed = u64::from(seed);
        let mask = corrupt(&self.phantom.mask, dropout, clutter, seed);
        let model = localize(&mask, &RansacConfig { iters, threshold, seed }).map_err(|e| e.to_string())?;
        let spacing = [self.spacing_mm; 3];
        let truth = &self.phantom.skeleton;
        let out = Localization {
            control_points: model.control_points,
            se_mm: skeleton_error(&model.polyline, truth, spacing).map_err(|e| e.to_string())?,
            ee_mm: endpoint_error(&model.polyline, truth, spacing).map_err(|e| e.to_string())?,
            polyline: model.polyline.points,
            truth: truth.points.clone(),
            score: model.score,
            mask_voxels: mask.count(),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }
}

fn project<T: Copy>(n: usize, a: Axis, at: impl Fn([usize; 3]) -> T, fold: fn(T, T) -> T, zero: T) -> Vec<T> {
    let (r, c) = a.in_plane();
    let mut out = vec![zero; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = zero;
            for k in 0..n {
                let mut p = [0; 3];
                p[a.index()] = k;
                p[r] = i;
                p[c] = j;
                acc = fold(acc, at(p));
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Segmentation with missed catheter voxels and 3x3x3 false positives.
pub fn corrupt(mask: &Mask3, dropout: f64, clutter: usize, seed: u64) -> Mask3 {
    let mut rng = rng_from(seed);
    let dims = mask.dims();
    let mut out = mask.clone();
    for [x, y, z] in mask.positives() {
        if rng.random::<f64>() < dropout {
            out.set(x, y, z, false);
        }
    }
    for _ in 0..clutter {
        let c = dims.map(|n| rng.random_range(1..n.saturating_sub(1).max(2)));
        for dz in 0..3 {
            for dy in 0..3 {
                for dx in 0..3 {
                    let p = [c[0] + dx, c[1] + dy, c[2] + dz].map(|v| v - 1);
                    if p.iter().zip(dims).all(|(&v, n)| v < n) {
                        out.set(p[0], p[1], p[2], true);
                    }
                }
            }
        }
    }
    out
}
