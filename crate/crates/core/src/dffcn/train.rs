//! Adam training on sampled, augmented patches.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_rng, derive_seed, stream};
use crate::slicer::Axis;
use crate::tensor::{AdamConfig, AdamState, Real};
use crate::volume::{Mask3, Volume3};

use super::fused::{default_axis, df_loss_and_grads, single_axis_loss_and_grads, LossGrads};
use super::network::Network;
use super::sampling::{augment, sample_centers, Provenance, TrainSample, DEFAULT_POSITIVE_CAP};

/// Which prediction the loss is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "axis")]
pub enum Mode {
    /// Fused three-direction prediction through the 3D head.
    DirectionFused,
    /// 2D predictions along one axis; `None` draws the axis from the seed.
    SingleAxis(Option<Axis>),
}

impl Mode {
    pub fn resolve_axis(self, seed: u64) -> Option<Axis> {
        match self {
            Mode::DirectionFused => None,
            Mode::SingleAxis(a) => Some(a.unwrap_or_else(|| default_axis(seed))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means one pass over the sample pool.
    pub steps_per_epoch: Option<usize>,
    pub batch: usize,
    pub seed: u64,
    pub d: usize,
    pub patch_size: usize,
    pub mode: Mode,
    pub positive_cap: Option<usize>,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: AdamConfig::default().lr,
            epochs: 1,
            steps_per_epoch: None,
            batch: 1,
            seed: 0,
            d: 3,
            patch_size: 48,
            mode: Mode::DirectionFused,
            positive_cap: Some(DEFAULT_POSITIVE_CAP),
            augment: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every optimizer step.
    pub loss_trace: Vec<f64>,
    pub steps: usize,
    pub pool_size: usize,
    pub axis: Option<Axis>,
}

/// Train `net` on `(normalized volume, mask)` pairs.
pub fn train<T: Real>(
    net: &Network<T>,
    dataset: &[(Volume3, Mask3)],
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    net.config().check_input_size(cfg.patch_size)?;
    let axis = cfg.mode.resolve_axis(cfg.seed);
    let mut report = TrainReport { axis, ..TrainReport::default() };
    let mut net = net.clone();
    if cfg.epochs == 0 {
        return Ok((net, report));
    }

    let mut pool: Vec<(usize, [usize; 3], Provenance)> = Vec::new();
    for (i, (vol, mask)) in dataset.iter().enumerate() {
        if vol.dims() != mask.dims() {
            return Err(Error::Shape(format!("volume {i}: {:?} vs mask {:?}", vol.dims(), mask.dims())));
        }
        let seed = derive_seed(cfg.seed, stream::SAMPLING, i as u64);
        pool.extend(sample_centers(mask, cfg.positive_cap, seed)?.into_iter().map(|(c, p)| (i, c, p)));
    }
    report.pool_size = pool.len();

    let mut adam = AdamState::new(
        AdamConfig::with_lr(cfg.lr),
        net.params().iter().map(|p| p.data.as_slice()),
    );
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or((pool.len() / cfg.batch).max(1));
    let scale = T::one() / T::of_f64(cfg.batch as f64);
    let mut cursor = pool.len();
    let mut epoch_draws = 0u64;
    for _ in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let step = report.steps as u64;
            let mut total: Option<LossGrads<T>> = None;
            for j in 0..cfg.batch {
                if cursor == pool.len() {
                    pool.shuffle(&mut child_rng(cfg.seed, stream::ORDER, epoch_draws));
                    epoch_draws += 1;
                    cursor = 0;
                }
                let (vi, center, prov) = pool[cursor];
                cursor += 1;
                let (vol, mask) = &dataset[vi];
                let mut sample = TrainSample::at(vol, mask, center, cfg.patch_size, prov)?;
                let sample_id = step * cfg.batch as u64 + j as u64;
                if cfg.augment {
                    sample = augment(&sample, derive_seed(cfg.seed, stream::AUGMENT, sample_id))?;
                }
                let dropout = Some(derive_seed(cfg.seed, stream::DROPOUT, sample_id));
                let lg = match axis {
                    None => df_loss_and_grads(&net, &sample.patch, &sample.label, cfg.d, dropout)?,
                    Some(a) => single_axis_loss_and_grads(&net, &sample.patch, &sample.label, cfg.d, a, dropout)?,
                };
                total = Some(match total {
                    None => lg,
                    Some(mut t) => {
                        t.loss += lg.loss;
                        for (a, b) in t.grads.iter_mut().zip(&lg.grads) {
                            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
                        }
                        t
                    }
                });
            }
            let mut total = total.expect("batch is non-empty");
            let loss = (total.loss * scale).as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { step: report.steps, loss });
            }
            total.grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
            let grads: Vec<&[T]> = total.grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [T]> = net.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
            adam.step(&mut params, &grads)?;
            report.loss_trace.push(loss);
            report.steps += 1;
        }
    }
    Ok((net, report))
}
