//! Synthetic ultrasound-like phantoms: a bright curved tube in multiplicative
//! speckle with bright distractor blobs, plus mask and centerline.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localizer::{Point, Polyline};
use crate::rng::{child_rng, derive_seed, stream, Rng};
use crate::volume::{load_mask, load_volume, save_mask, save_volume, Dims, Mask3, Volume3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing_mm: f64,
    pub tube_radius_vox: f64,
    /// 0 is a straight tube; 1 bends the midpoint by up to a quarter of the
    /// tube length.
    pub curvature: f64,
    pub tube_intensity: f64,
    pub background_mean: f64,
    /// Speckle multiplies every voxel by a factor uniform in `1 ± strength`.
    pub speckle_strength: f64,
    pub n_distractors: usize,
    pub distractor_intensity: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [64; 3],
            spacing_mm: 0.54,
            tube_radius_vox: 2.1,
            curvature: 0.5,
            tube_intensity: 0.8,
            background_mean: 0.3,
            speckle_strength: 0.6,
            n_distractors: 4,
            distractor_intensity: 0.7,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Guaranteed gap between mean intensity inside and outside the mask:
    /// half the tube-to-background difference, the level at the tube's
    /// soft edge.
    pub fn contrast(&self) -> f64 {
        (self.tube_intensity - self.background_mean) / 2.0
    }

    fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.spacing_mm <= 0.0 || self.tube_radius_vox <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid phantom geometry {:?}", self)));
        }
        if !(0.0..=1.0).contains(&self.curvature) || !(0.0..1.0).contains(&self.speckle_strength) {
            return Err(Error::InvalidArgument("curvature must be in [0,1] and speckle in [0,1)".into()));
        }
        if self.tube_intensity <= self.background_mean {
            return Err(Error::InvalidArgument("tube must be brighter than the background".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume3,
    pub mask: Mask3,
    /// Tube centerline in voxel coordinates.
    pub skeleton: Polyline,
    pub distractors: Vec<Distractor>,
}

/// Samples of the quadratic Bezier centerline.
const CENTERLINE_SAMPLES: usize = 201;
const PLACEMENT_TRIES: usize = 100;

fn bezier(p: [Point; 3], t: f64) -> Point {
    let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
    [0, 1, 2].map(|i| a * p[0][i] + b * p[1][i] + c * p[2][i])
}

fn inside(p: Point, dims: Dims, margin: f64) -> bool {
    (0..3).all(|i| p[i] >= margin && p[i] <= dims[i] as f64 - 1.0 - margin)
}

/// Random centerline running along a random axis across most of the volume.
/// The curve stays in the control points' convex hull, so checking the
/// control points keeps the whole tube `margin` inside the volume.
fn place_centerline(cfg: &PhantomConfig, rng: &mut Rng) -> Result<[Point; 3]> {
    let margin = cfg.tube_radius_vox + 1.0;
    for _ in 0..PLACEMENT_TRIES {
        let axis = rng.random_range(0..3);
        let mut ends = [[0.0; 3]; 2];
        for (e, end) in ends.iter_mut().enumerate() {
            for i in 0..3 {
                let lo = margin;
                let hi = cfg.dims[i] as f64 - 1.0 - margin;
                if hi <= lo {
                    return Err(Error::Geometry(format!("tube of radius {} does not fit in {:?}", cfg.tube_radius_vox, cfg.dims)));
                }
                end[i] = if i == axis {
                    let slack = (hi - lo) * 0.1;
                    if e == 0 { lo + rng.random_range(0.0..=slack) } else { hi - rng.random_range(0.0..=slack) }
                } else {
                    rng.random_range(lo + (hi - lo) * 0.2..=hi - (hi - lo) * 0.2)
                };
            }
        }
        let [p0, p2] = ends;
        let mid = [0, 1, 2].map(|i| 0.5 * (p0[i] + p2[i]));
        let len = crate::localizer::dist(p0, p2);
        // Random unit direction perpendicular to the chord.
        let chord = [0, 1, 2].map(|i| (p2[i] - p0[i]) / len);
        let r: Point = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let along = r[0] * chord[0] + r[1] * chord[1] + r[2] * chord[2];
        let perp = [0, 1, 2].map(|i| r[i] - along * chord[i]);
        let pn = (perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]).sqrt();
        if pn < 1e-6 {
            continue;
        }
        // The curve's midpoint moves half as far as the middle control point.
        let bend = 2.0 * cfg.curvature * len * 0.25 * rng.random_range(0.5..=1.0);
        let p1 = [0, 1, 2].map(|i| mid[i] + bend * perp[i] / pn);
        if inside(p0, cfg.dims, margin) && inside(p1, cfg.dims, margin) && inside(p2, cfg.dims, margin) {
            return Ok([p0, p1, p2]);
        }
    }
    Err(Error::Geometry(format!(
        "could not place a tube of radius {} and curvature {} in {:?}",
        cfg.tube_radius_vox, cfg.curvature, cfg.dims
    )))
}

/// Axis-aligned bright ellipsoid; its soft edge ends half a unit of
/// [`Distractor::level`] outside the surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Distractor {
    pub center: Point,
    pub semi_axes: Point,
}

impl Distractor {
    /// Ellipsoidal "radius" coordinate: 1 on the surface.
    pub fn level(&self, p: Point) -> f64 {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.semi_axes[i]).powi(2)).sum::<f64>().sqrt()
    }
}

fn place_blobs(cfg: &PhantomConfig, line: &Polyline, rng: &mut Rng) -> Vec<Distractor> {
    let mut blobs = Vec::with_capacity(cfg.n_distractors);
    for _ in 0..cfg.n_distractors {
        for _ in 0..PLACEMENT_TRIES {
            let semi_axes: Point = [0, 1, 2].map(|_| rng.random_range(1.5..=4.0));
            let reach = semi_axes.iter().copied().fold(0.0, f64::max);
            let center: Point = [0, 1, 2].map(|i| rng.random_range(0.0..cfg.dims[i] as f64 - 1.0));
            // Soft edge reaches one voxel past the surface.
            if line.distance(center) > reach + 1.0 + cfg.tube_radius_vox + 1.0 {
                blobs.push(Distractor { center, semi_axes });
                break;
            }
        }
    }
    blobs
}

/// Linear ramp from 1 at `edge - 0.5` to 0 at `edge + 0.5`.
fn soft(distance: f64, edge: f64) -> f64 {
    (edge + 0.5 - distance).clamp(0.0, 1.0)
}

pub fn generate(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = child_rng(cfg.seed, stream::PHANTOM, 0);
    let ctrl = place_centerline(cfg, &mut rng)?;
    let skeleton = Polyline {
        points: (0..CENTERLINE_SAMPLES).map(|j| bezier(ctrl, j as f64 / (CENTERLINE_SAMPLES - 1) as f64)).collect(),
    };
    let blobs = place_blobs(cfg, &skeleton, &mut rng);
    let r = cfg.tube_radius_vox;
    let (lo, hi) = skeleton.bounds();
    let near = |p: Point| (0..3).all(|i| p[i] >= lo[i] - r - 1.0 && p[i] <= hi[i] + r + 1.0);

    let dims = cfg.dims;
    let n = dims.iter().product::<usize>();
    let mut data = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    // Slowly varying background so intensity alone does not separate classes.
    let phase: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.0..std::f64::consts::TAU));
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let d = if near(p) { skeleton.distance(p) } else { f64::INFINITY };
                labels.push(u8::from(d <= r));
                let wave = (0..3).map(|i| (p[i] / dims[i] as f64 * std::f64::consts::TAU + phase[i]).sin()).sum::<f64>();
                let mut v = cfg.background_mean * (1.0 + 0.1 * wave / 3.0);
                v += (cfg.tube_intensity - v) * soft(d, r);
                for b in &blobs {
                    let w = soft(b.level(p), 1.0);
                    if w > 0.0 {
                        v += (cfg.distractor_intensity - v).max(0.0) * w;
                    }
                }
                let speckle = 1.0 + cfg.speckle_strength * rng.random_range(-1.0..=1.0);
                data.push((v * speckle) as f32);
            }
        }
    }
    let spacing = [cfg.spacing_mm; 3];
    Ok(Phantom { volume: Volume3::new(dims, spacing, data)?, mask: Mask3::new(dims, labels)?, skeleton, distractors: blobs })
}

/// `n` phantoms with member seeds split from `base_seed`.
pub fn generate_dataset(n: usize, base_seed: u64, template: &PhantomConfig) -> Result<Vec<(PhantomConfig, Phantom)>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one phantom".into()));
    }
    (0..n)
        .map(|i| {
            let cfg = PhantomConfig { seed: derive_seed(base_seed, stream::PHANTOM, i as u64), ..template.clone() };
            generate(&cfg).map(|p| (cfg, p))
        })
        .collect()
}

/// Contiguous fold assignment; the first `n % k` folds take one extra member.
pub fn fold_assignment(n: usize, k: usize) -> Vec<usize> {
    let k = k.max(1);
    let (base, extra) = (n / k, n % k);
    (0..k).flat_map(|f| std::iter::repeat_n(f, base + usize::from(f < extra))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub name: String,
    pub seed: u64,
    pub fold: usize,
}

impl Member {
    pub fn volume_path(&self, dir: &Path) -> PathBuf {
        dir.join(&self.name)
    }

    pub fn mask_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_mask", self.name))
    }

    pub fn skeleton_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_skeleton.json", self.name))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub base_seed: u64,
    pub folds: usize,
    pub config: PhantomConfig,
    pub members: Vec<Member>,
}

impl DatasetManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn fold_members(&self, fold: usize) -> impl Iterator<Item = &Member> {
        self.members.iter().filter(move |m| m.fold == fold)
    }

    pub fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.folds {
            return Err(Error::InvalidArgument(format!("fold {fold} out of range (dataset has {} folds)", self.folds)));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes")).map_err(|e| Error::io(&path, e))
    }

    /// Accepts the dataset directory or the manifest file itself.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(Self::FILE))
        } else {
            (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let m = serde_json::from_str(&text).map_err(|e| Error::Header { path: file.clone(), source: e })?;
        Ok((m, dir))
    }
}

/// Write volumes, masks, centerlines and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, n: usize, base_seed: u64, folds: usize, template: &PhantomConfig) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let phantoms = generate_dataset(n, base_seed, template)?;
    let assignment = fold_assignment(n, folds);
    let mut members = Vec::with_capacity(n);
    for (i, ((cfg, ph), fold)) in phantoms.into_iter().zip(assignment).enumerate() {
        let m = Member { name: format!("phantom_{i:03}"), seed: cfg.seed, fold };
        save_volume(&ph.volume, m.volume_path(dir))?;
        save_mask(&ph.mask, ph.volume.spacing_mm(), m.mask_path(dir))?;
        let sk = m.skeleton_path(dir);
        std::fs::write(&sk, serde_json::to_string(&ph.skeleton).expect("polyline serializes")).map_err(|e| Error::io(&sk, e))?;
        members.push(m);
    }
    let manifest = DatasetManifest { base_seed, folds: folds.max(1), config: template.clone(), members };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Volume and mask of one dataset member.
pub fn load_member(dir: &Path, m: &Member) -> Result<(Volume3, Mask3)> {
    let vol = load_volume(m.volume_path(dir))?;
    let (mask, _) = load_mask(m.mask_path(dir))?;
    Ok((vol, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes() {
        let f = fold_assignment(25, 3);
        let sizes: Vec<usize> = (0..3).map(|k| f.iter().filter(|&&x| x == k).count()).collect();
        assert_eq!(sizes, [9, 8, 8]);
        assert_eq!(fold_assignment(1, 3), vec![0]);
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let cfg = PhantomConfig { dims: [32; 3], seed: 5, ..PhantomConfig::default() };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let b = generate(&PhantomConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.volume, b.volume);
    }

    #[test]
    fn rejects_tiny_volume() {
        let cfg = PhantomConfig { dims: [4; 3], ..PhantomConfig::default() };
        assert!(generate(&cfg).is_err());
    }
}
