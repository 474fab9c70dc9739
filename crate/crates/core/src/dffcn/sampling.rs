//! Training patch sampling and on-the-fly augmentation.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_rng, Rng};
use crate::volume::{extract_mask_patch, extract_patch, Mask3, PatchRegion, Volume3};

/// Positive centers kept per volume before subsampling.
pub const DEFAULT_POSITIVE_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CatheterCentered,
    Negative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub patch: Volume3,
    pub label: Mask3,
    pub provenance: Provenance,
}

impl TrainSample {
    /// Crop the M³ patch whose center voxel (index `(M - 1) / 2`) is `center`.
    pub fn at(vol: &Volume3, mask: &Mask3, center: [usize; 3], m: usize, provenance: Provenance) -> Result<Self> {
        let region = PatchRegion::centered(center, 1, m)?;
        Ok(Self { patch: extract_patch(vol, &region)?, label: extract_mask_patch(mask, &region)?, provenance })
    }

    pub fn center_index(&self) -> usize {
        (self.patch.dims()[0] - 1) / 2
    }
}

/// Patch centers: every catheter voxel (or `cap` of them, drawn without
/// replacement) and the same number of distinct background voxels.
pub fn sample_centers(mask: &Mask3, cap: Option<usize>, seed: u64) -> Result<Vec<([usize; 3], Provenance)>> {
    let positives = mask.positives();
    if positives.is_empty() {
        return Err(Error::InvalidArgument("mask has no catheter voxels to sample".into()));
    }
    let dims = mask.dims();
    let mut rng = child_rng(seed, crate::rng::stream::SAMPLING, 0);
    let positives = match cap {
        Some(c) if c < positives.len() => {
            let mut keep = index::sample(&mut rng, positives.len(), c).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| positives[i]).collect()
        }
        _ => positives,
    };
    let background: Vec<usize> = (0..mask.labels().len()).filter(|&i| mask.labels()[i] == 0).collect();
    if background.len() < positives.len() {
        return Err(Error::InvalidArgument(format!(
            "only {} background voxels for {} catheter samples",
            background.len(),
            positives.len()
        )));
    }
    let mut negatives = index::sample(&mut rng, background.len(), positives.len()).into_vec();
    negatives.sort_unstable();
    let unravel = |i: usize| [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
    Ok(positives
        .into_iter()
        .map(|p| (p, Provenance::CatheterCentered))
        .chain(negatives.into_iter().map(|i| (unravel(background[i]), Provenance::Negative)))
        .collect())
}

/// Materialized samples for [`sample_centers`].
pub fn sample_training_patches(
    vol: &Volume3,
    mask: &Mask3,
    m: usize,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    if vol.dims() != mask.dims() {
        return Err(Error::Shape(format!("volume {:?} and mask {:?} differ", vol.dims(), mask.dims())));
    }
    sample_centers(mask, cap, seed)?
        .into_iter()
        .map(|(c, p)| TrainSample::at(vol, mask, c, m, p))
        .collect()
}

/// One random augmentation: an optional quarter-turn rotation, per-axis
/// mirrors, then intensity `v * scale + shift` on the patch only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    /// Rotation axis index and number of quarter turns.
    pub rotation: (usize, u8),
    pub mirror: [bool; 3],
    pub scale: f32,
    pub shift: f32,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self { rotation: (0, 0), mirror: [false; 3], scale: 1.0, shift: 0.0 }
    }

    pub fn random(rng: &mut Rng) -> Self {
        let axis = rng.random_range(0..3);
        let turns = rng.random_range(0..4);
        let mirror = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        Self { rotation: (axis, turns), mirror, scale: rng.random_range(0.8..=1.2), shift: rng.random_range(-0.1..=0.1) }
    }

    /// Source voxel read by output voxel `p` in an M³ cube.
    fn source(&self, mut p: [usize; 3], m: usize) -> [usize; 3] {
        for a in 0..3 {
            if self.mirror[a] {
                p[a] = m - 1 - p[a];
            }
        }
        let (axis, turns) = self.rotation;
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for _ in 0..turns {
            let (pu, pv) = (p[u], p[v]);
            p[u] = pv;
            p[v] = m - 1 - pu;
        }
        p
    }

    pub fn apply(&self, sample: &TrainSample) -> Result<TrainSample> {
        let dims = sample.patch.dims();
        if !sample.patch.is_cubic() || sample.label.dims() != dims {
            return Err(Error::Shape(format!("augmentation needs a cubic patch and matching label, got {dims:?}")));
        }
        let m = dims[0];
        let (scale, shift) = (self.scale, self.shift);
        let patch = Volume3::from_fn(dims, sample.patch.spacing_mm(), |x, y, z| {
            let [sx, sy, sz] = self.source([x, y, z], m);
            sample.patch.get(sx, sy, sz) * scale + shift
        })?;
        let label = Mask3::from_fn(dims, |x, y, z| {
            let [sx, sy, sz] = self.source([x, y, z], m);
            sample.label.get(sx, sy, sz)
        })?;
        Ok(TrainSample { patch, label, provenance: sample.provenance })
    }
}

pub fn augment(sample: &TrainSample, seed: u64) -> Result<TrainSample> {
    AugmentDraw::random(&mut child_rng(seed, crate::rng::stream::AUGMENT, 0)).apply(sample)
}
