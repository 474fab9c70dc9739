//! Whole-volume prediction, k-fold cross-validation and the gap sweep.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dffcn::{forward_df, forward_single_axis, train, Mode, NetConfig, Network, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::localizer::{localize, skeleton_polyline, CatheterModel, Polyline, RansacConfig};
use crate::metrics::{evaluate, EvalRow, MetricsReport};
use crate::rng::derive_seed;
use crate::slicer::{stitch, tile, Axis};
use crate::tensor::Real;
use crate::volume::{extract_patch, normalize, Mask3, Volume3};

/// Core size N and context size M of inference patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub n: usize,
    pub m: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self { n: 32, m: 48 }
    }
}

/// A prediction mode with its slicing direction fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    DirectionFused,
    SingleAxis(Axis),
}

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::DirectionFused => "df",
            Predictor::SingleAxis(_) => "single_axis",
        }
    }
}

/// Catheter probability for every voxel of a normalized volume: tile into
/// N³ cores with M³ context, predict each patch, keep the cores.
pub fn predict_volume<T: Real>(net: &Network<T>, vol: &Volume3, predictor: Predictor, d: usize, tiling: Tiling) -> Result<Volume3> {
    net.config().check_input_size(tiling.m)?;
    let regions = tile(vol.dims(), tiling.n, tiling.m)?;
    let preds = regions
        .par_iter()
        .map(|r| {
            let patch = extract_patch(vol, r)?;
            let p = match predictor {
                Predictor::DirectionFused => forward_df(net, &patch, d)?,
                Predictor::SingleAxis(a) => forward_single_axis(net, &patch, d, a)?,
            };
            Ok((*r, p))
        })
        .collect::<Result<Vec<_>>>()?;
    stitch(&preds, vol.dims())
}

/// One evaluation volume with everything the metrics need.
#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    /// Min-max normalized intensities.
    pub volume: Volume3,
    pub mask: Mask3,
    pub skeleton: Polyline,
}

impl Case {
    /// Normalizes `volume` and derives the reference skeleton from `mask`.
    pub fn new(name: impl Into<String>, volume: &Volume3, mask: Mask3) -> Result<Self> {
        if volume.dims() != mask.dims() {
            return Err(Error::Shape(format!("volume {:?} and mask {:?} differ", volume.dims(), mask.dims())));
        }
        let skeleton = skeleton_polyline(&mask)?;
        Ok(Self { name: name.into(), volume: normalize(volume), mask, skeleton })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub tiling: Tiling,
    /// Probability above which a voxel is labelled catheter.
    pub threshold: f32,
    pub ransac: RansacConfig,
    pub folds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::tiny(),
            train: TrainConfig { lr: 1e-3, ..TrainConfig::default() },
            tiling: Tiling::default(),
            threshold: 0.5,
            ransac: RansacConfig::default(),
            folds: 3,
        }
    }
}

/// Threshold, localize and score one predicted probability volume.
pub fn score_case(case: &Case, prob: &Volume3, threshold: f32, ransac: &RansacConfig) -> Result<(MetricsReport, Option<CatheterModel>)> {
    let pred = prob.threshold(threshold);
    let model = match localize(&pred, ransac) {
        Ok(m) => Some(m),
        Err(Error::NoCatheter(_)) | Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let report = evaluate(&pred, &case.mask, model.as_ref().map(|m| &m.polyline), &case.skeleton, prob.spacing_mm())?;
    Ok((report, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub rows: Vec<EvalRow>,
    pub train: TrainReport,
    pub seconds: f64,
}

impl FoldResult {
    pub fn mean_dice(&self) -> f64 {
        let d: Vec<f64> = self.rows.iter().filter_map(|r| r.report.map(|m| m.dice)).collect();
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }
}

/// Train on every fold but `fold`, then predict and score the held-out fold.
pub fn run_fold(cases: &[Case], assignment: &[usize], fold: usize, mode: Mode, d: usize, seed: u64, cfg: &ExperimentConfig) -> Result<FoldResult> {
    let start = Instant::now();
    if assignment.len() != cases.len() {
        return Err(Error::InvalidArgument("fold assignment does not cover the cases".into()));
    }
    let fold_seed = derive_seed(seed, 0, fold as u64);
    let training: Vec<(Volume3, Mask3)> = cases
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f != fold)
        .map(|(c, _)| (c.volume.clone(), c.mask.clone()))
        .collect();
    let net = Network::<f32>::build(cfg.net.clone(), fold_seed)?;
    let tcfg = TrainConfig { seed: fold_seed, d, mode, ..cfg.train.clone() };
    let (net, report) = train(&net, &training, &tcfg)?;
    let predictor = match report.axis {
        None => Predictor::DirectionFused,
        Some(a) => Predictor::SingleAxis(a),
    };
    let rows = cases
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f == fold)
        .map(|(c, _)| {
            let prob = predict_volume(&net, &c.volume, predictor, d, cfg.tiling)?;
            let (r, _) = score_case(c, &prob, cfg.threshold, &cfg.ransac)?;
            Ok(EvalRow { name: c.name.clone(), report: Some(r) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldResult { fold, rows, train: report, seconds: start.elapsed().as_secs_f64() })
}

pub fn cross_validate(cases: &[Case], assignment: &[usize], mode: Mode, d: usize, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<FoldResult>> {
    let folds = assignment.iter().copied().max().map_or(0, |m| m + 1);
    (0..folds).map(|f| run_fold(cases, assignment, f, mode, d, seed, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: String,
    pub d: usize,
    pub seed: u64,
    /// Mean Dice over all held-out volumes of all folds.
    pub dice: f64,
    pub fold_dice: Vec<f64>,
}

/// Cross-validated Dice for every `(mode, d)` combination.
pub fn sweep_d(cases: &[Case], assignment: &[usize], modes: &[Mode], d_values: &[usize], seed: u64, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        for &d in d_values {
            let folds = cross_validate(cases, assignment, mode, d, seed, cfg)?;
            let all: Vec<f64> = folds.iter().flat_map(|f| f.rows.iter().filter_map(|r| r.report.map(|m| m.dice))).collect();
            rows.push(SweepRow {
                mode: match mode {
                    Mode::DirectionFused => "df".into(),
                    Mode::SingleAxis(_) => "single_axis".into(),
                },
                d,
                seed,
                dice: all.iter().sum::<f64>() / all.len().max(1) as f64,
                fold_dice: folds.iter().map(FoldResult::mean_dice).collect(),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mode,d,seed,dice\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.6}\n", r.mode, r.d, r.seed, r.dice));
    }
    out
}
