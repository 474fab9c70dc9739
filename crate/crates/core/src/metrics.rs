//! Segmentation overlap, average Hausdorff distance, and curve errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localizer::{Point, Polyline};
use crate::volume::Mask3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub recall: f64,
    pub precision: f64,
    pub dice: f64,
}

fn check_dims(a: &Mask3, b: &Mask3) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("mask dims differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Recall, precision and Dice from voxel counts. Two empty masks agree
/// perfectly; one empty mask against a non-empty one scores zero.
pub fn overlap_metrics(pred: &Mask3, truth: &Mask3) -> Result<Overlap> {
    check_dims(pred, truth)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fne += 1,
            _ => {}
        }
    }
    if tp + fp + fne == 0 {
        return Ok(Overlap { recall: 1.0, precision: 1.0, dice: 1.0 });
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(Overlap {
        recall: ratio(tp, tp + fne),
        precision: ratio(tp, tp + fp),
        dice: ratio(2 * tp, 2 * tp + fp + fne),
    })
}

fn mean_min_distance(from: &[[usize; 3]], to: &[[usize; 3]]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|a| {
            let best = to
                .iter()
                .map(|b| {
                    let d = |i: usize| a[i] as i64 - b[i] as i64;
                    d(0) * d(0) + d(1) * d(1) + d(2) * d(2)
                })
                .min()
                .expect("non-empty");
            (best as f64).sqrt()
        })
        .sum();
    sum / from.len() as f64
}

/// Average Hausdorff distance in voxels: the mean of both directed mean
/// nearest-neighbour distances.
pub fn ahd(pred: &Mask3, truth: &Mask3) -> Result<f64> {
    check_dims(pred, truth)?;
    let (p, t) = (pred.positives(), truth.positives());
    if p.is_empty() || t.is_empty() {
        return Err(Error::InvalidArgument("average Hausdorff distance is undefined for an empty mask".into()));
    }
    Ok(0.5 * (mean_min_distance(&p, &t) + mean_min_distance(&t, &p)))
}

fn to_mm(line: &Polyline, spacing_mm: [f64; 3]) -> Polyline {
    Polyline { points: line.points.iter().map(|p| [0, 1, 2].map(|i| p[i] * spacing_mm[i])).collect() }
}

fn check_curves(fitted: &Polyline, truth: &Polyline) -> Result<()> {
    if fitted.is_empty() || truth.is_empty() {
        return Err(Error::InvalidArgument("curve error needs two non-empty polylines".into()));
    }
    Ok(())
}

/// Arc-length fractions at which the fitted curve is sampled.
pub const SKELETON_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Mean distance (mm) from five equal-arc-length samples of `fitted` to `truth`.
pub fn skeleton_error(fitted: &Polyline, truth: &Polyline, spacing_mm: [f64; 3]) -> Result<f64> {
    check_curves(fitted, truth)?;
    let (f, t) = (to_mm(fitted, spacing_mm), to_mm(truth, spacing_mm));
    Ok(SKELETON_FRACTIONS.iter().map(|&s| t.distance(f.point_at_fraction(s))).sum::<f64>() / 5.0)
}

fn dist(a: Point, b: Point) -> f64 {
    crate::localizer::dist(a, b)
}

/// Mean distance (mm) between matched endpoints, using whichever of the two
/// pairings has the smaller total.
pub fn endpoint_error(fitted: &Polyline, truth: &Polyline, spacing_mm: [f64; 3]) -> Result<f64> {
    check_curves(fitted, truth)?;
    let (f, t) = (to_mm(fitted, spacing_mm), to_mm(truth, spacing_mm));
    let (f0, f1) = (f.points[0], *f.points.last().expect("non-empty"));
    let (t0, t1) = (t.points[0], *t.points.last().expect("non-empty"));
    let straight = dist(f0, t0) + dist(f1, t1);
    let crossed = dist(f0, t1) + dist(f1, t0);
    Ok(straight.min(crossed) / 2.0)
}

/// Per-volume metrics; distance entries are `None` when undefined (empty
/// prediction or no fitted model).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub dice: f64,
    pub ahd_voxels: Option<f64>,
    pub se_mm: Option<f64>,
    pub ee_mm: Option<f64>,
}

pub fn evaluate(
    pred: &Mask3,
    truth: &Mask3,
    fitted: Option<&Polyline>,
    truth_skeleton: &Polyline,
    spacing_mm: [f64; 3],
) -> Result<MetricsReport> {
    let o = overlap_metrics(pred, truth)?;
    let ahd_voxels = if pred.is_empty() || truth.is_empty() { None } else { Some(ahd(pred, truth)?) };
    let (se_mm, ee_mm) = match fitted {
        Some(f) => (Some(skeleton_error(f, truth_skeleton, spacing_mm)?), Some(endpoint_error(f, truth_skeleton, spacing_mm)?)),
        None => (None, None),
    };
    Ok(MetricsReport { recall: o.recall, precision: o.precision, dice: o.dice, ahd_voxels, se_mm, ee_mm })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, n: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), n: v.len() }
    }
}

/// Mean ± std per column over the volumes that have a value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub recall: MeanStd,
    pub precision: MeanStd,
    pub dice: MeanStd,
    pub ahd_voxels: MeanStd,
    pub se_mm: MeanStd,
    pub ee_mm: MeanStd,
}

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MetricsReport> + Clone) -> Aggregate {
    let col = |f: fn(&MetricsReport) -> Option<f64>| MeanStd::of(reports.clone().into_iter().filter_map(f));
    Aggregate {
        recall: col(|r| Some(r.recall)),
        precision: col(|r| Some(r.precision)),
        dice: col(|r| Some(r.dice)),
        ahd_voxels: col(|r| r.ahd_voxels),
        se_mm: col(|r| r.se_mm),
        ee_mm: col(|r| r.ee_mm),
    }
}

pub const TABLE_HEADER: [&str; 6] = ["Recall (%)", "Precision (%)", "Dice (%)", "AHD (voxel)", "SE (mm)", "EE (mm)"];

/// One named row of an evaluation; `None` marks a volume whose artifacts
/// were missing. Absent rows are listed but left out of the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub report: Option<MetricsReport>,
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", x * scale))
}

/// Aligned text table with per-volume rows and a final mean ± std row.
pub fn format_table(rows: &[EvalRow]) -> String {
    let mut lines = vec![std::iter::once("volume").chain(TABLE_HEADER).map(String::from).collect::<Vec<_>>()];
    for row in rows {
        let mut cells = vec![row.name.clone()];
        match &row.report {
            Some(r) => cells.extend([
                cell(Some(r.recall), 100.0),
                cell(Some(r.precision), 100.0),
                cell(Some(r.dice), 100.0),
                cell(r.ahd_voxels, 1.0),
                cell(r.se_mm, 1.0),
                cell(r.ee_mm, 1.0),
            ]),
            None => cells.extend(std::iter::repeat_n("absent".to_string(), 6)),
        }
        lines.push(cells);
    }
    let agg = aggregate(rows.iter().filter_map(|r| r.report.as_ref()).collect::<Vec<_>>());
    let ms = |m: MeanStd, s: f64| if m.n == 0 { "-".into() } else { format!("{:.2}±{:.2}", m.mean * s, m.std * s) };
    lines.push(vec![
        "mean±std".into(),
        ms(agg.recall, 100.0),
        ms(agg.precision, 100.0),
        ms(agg.dice, 100.0),
        ms(agg.ahd_voxels, 1.0),
        ms(agg.se_mm, 1.0),
        ms(agg.ee_mm, 1.0),
    ]);
    let widths: Vec<usize> = (0..7).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    lines
        .iter()
        .map(|l| {
            l.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_examples() {
        let a = Mask3::from_voxels([4, 1, 1], &[[0, 0, 0], [1, 0, 0]]).unwrap();
        let b = Mask3::from_voxels([4, 1, 1], &[[1, 0, 0], [2, 0, 0]]).unwrap();
        assert_eq!(overlap_metrics(&a, &b).unwrap(), Overlap { recall: 0.5, precision: 0.5, dice: 0.5 });
        assert_eq!(overlap_metrics(&a, &a).unwrap(), Overlap { recall: 1.0, precision: 1.0, dice: 1.0 });
        let e = Mask3::empty([4, 1, 1]).unwrap();
        assert_eq!(overlap_metrics(&e, &e).unwrap().dice, 1.0);
        assert_eq!(overlap_metrics(&e, &a).unwrap(), Overlap { recall: 0.0, precision: 0.0, dice: 0.0 });
        assert!(overlap_metrics(&a, &Mask3::empty([2, 2, 1]).unwrap()).is_err());
    }

    #[test]
    fn ahd_examples() {
        let a = Mask3::from_voxels([1, 1, 3], &[[0, 0, 0]]).unwrap();
        let b = Mask3::from_voxels([1, 1, 3], &[[0, 0, 2]]).unwrap();
        assert_eq!(ahd(&a, &b).unwrap(), 2.0);
        assert_eq!(ahd(&a, &a).unwrap(), 0.0);
        assert!(ahd(&a, &Mask3::empty([1, 1, 3]).unwrap()).is_err());
    }

    #[test]
    fn curve_error_examples() {
        let line = |y: f64| Polyline::new((0..=10).map(|i| [i as f64, y, 0.0]).collect()).unwrap();
        let s = [0.54; 3];
        assert_eq!(skeleton_error(&line(0.0), &line(0.0), s).unwrap(), 0.0);
        assert!((skeleton_error(&line(2.0), &line(0.0), s).unwrap() - 1.08).abs() < 1e-12);
        assert_eq!(endpoint_error(&line(0.0), &line(0.0).reversed(), s).unwrap(), 0.0);
        let fitted = Polyline::new(vec![[1.0, 0.0, 0.0], [7.0, 0.0, 0.0]]).unwrap();
        assert!((endpoint_error(&fitted, &line(0.0), s).unwrap() - 1.08).abs() < 1e-12);
    }

    #[test]
    fn table_layout() {
        let r = MetricsReport { recall: 1.0, precision: 0.5, dice: 2.0 / 3.0, ahd_voxels: Some(1.0), se_mm: None, ee_mm: Some(2.0) };
        let rows = vec![EvalRow { name: "a".into(), report: Some(r) }, EvalRow { name: "b".into(), report: None }];
        let t = format_table(&rows);
        let header = t.lines().next().unwrap();
        let pos: Vec<usize> = TABLE_HEADER.iter().map(|h| header.find(h).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(t.contains("absent"));
        assert!(t.lines().last().unwrap().contains("66.67±0.00"));
    }
}
