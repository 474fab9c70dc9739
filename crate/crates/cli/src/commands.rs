use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dffcn_core::dffcn::{default_axis, train, Mode, Network, Profile};
use dffcn_core::experiment::{predict_volume, sweep_csv, sweep_d, Case, Predictor};
use dffcn_core::localizer::{localize, skeleton_polyline, CatheterModel};
use dffcn_core::metrics::{aggregate, evaluate, format_table, EvalRow};
use dffcn_core::phantom::{load_member, write_dataset, DatasetManifest};
use dffcn_core::rng::{derive_seed, stream};
use dffcn_core::slicer::Axis;
use dffcn_core::volume::{load_mask, load_volume, normalize, save_mask, save_volume};
use serde::Serialize;

use crate::config::{set, RunConfig};
use crate::{AxisArg, Cli, Command, EvalArgs, GenArgs, LocalizeArgs, ModeArg, PredictArgs, SweepArgs, TrainArgs, TrainFlags};

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let force = cli.force;
    match cli.command {
        Command::Gen(a) => gen(a, &mut cfg, force),
        Command::Train(a) => train_cmd(a, &mut cfg, force),
        Command::Predict(a) => predict(a, &mut cfg, force),
        Command::Localize(a) => localize_cmd(a, &mut cfg, force),
        Command::Eval(a) => eval(a, force),
        Command::SweepD(a) => sweep(a, &mut cfg, force),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        bail!("{} already exists (use --force to overwrite)", path.display());
    }
    Ok(())
}

/// `out` with `suffix` appended to its file name.
fn suffixed(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn axis(a: AxisArg) -> Axis {
    match a {
        AxisArg::X => Axis::X,
        AxisArg::Y => Axis::Y,
        AxisArg::Z => Axis::Z,
    }
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) -> Result<()> {
    set(&mut cfg.d, f.d);
    if let Some(p) = &f.profile {
        cfg.profile = p.parse::<Profile>()?;
    }
    set(&mut cfg.train.epochs, f.epochs);
    if f.steps.is_some() {
        cfg.train.steps_per_epoch = f.steps;
    }
    set(&mut cfg.train.lr, f.lr);
    set(&mut cfg.train.patch_size, f.patch_size);
    set(&mut cfg.train.batch, f.batch);
    Ok(())
}

fn gen(a: GenArgs, cfg: &mut RunConfig, force: bool) -> Result<()> {
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.folds, a.folds);
    if let Some(s) = a.size {
        cfg.phantom.dims = [s; 3];
    }
    let n = a.n.unwrap_or(25);
    let non_empty = a.out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        bail!("{} is not empty (use --force to overwrite)", a.out.display());
    }
    let manifest = write_dataset(&a.out, n, cfg.seed, cfg.folds, &cfg.phantom)?;
    println!("wrote {} volumes in {} folds to {}", manifest.members.len(), manifest.folds, a.out.display());
    Ok(())
}

fn load_training_set(data: &Path, fold: usize) -> Result<Vec<(dffcn_core::volume::Volume3, dffcn_core::volume::Mask3)>> {
    let (manifest, root) = DatasetManifest::load(data)?;
    manifest.check_fold(fold)?;
    manifest
        .members
        .iter()
        .filter(|m| m.fold != fold)
        .map(|m| {
            let (v, mask) = load_member(&root, m)?;
            Ok((normalize(&v), mask))
        })
        .collect()
}

fn train_cmd(a: TrainArgs, cfg: &mut RunConfig, force: bool) -> Result<()> {
    set(&mut cfg.seed, a.seed);
    apply_train_flags(cfg, &a.flags)?;
    let weights = suffixed(&a.out, ".json");
    let trace_path = suffixed(&a.out, "_loss.json");
    refuse_overwrite(&weights, force)?;
    refuse_overwrite(&trace_path, force)?;

    let dataset = load_training_set(&a.data, a.fold)?;
    let mode = match a.mode.unwrap_or(ModeArg::Df) {
        ModeArg::Df => Mode::DirectionFused,
        ModeArg::SingleAxis => Mode::SingleAxis(a.axis.map(axis)),
    };
    let exp = cfg.experiment();
    let net = Network::<f32>::build(exp.net.clone(), derive_seed(cfg.seed, stream::INIT, 0))?;
    let tcfg = dffcn_core::dffcn::TrainConfig { seed: cfg.seed, mode, ..exp.train };
    let (net, report) = train(&net, &dataset, &tcfg)?;
    net.save(&a.out)?;
    std::fs::write(&trace_path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", trace_path.display()))?;
    let first = report.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = report.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} volumes (fold {} held out), loss {first:.4} -> {last:.4}, weights {}",
        report.steps,
        dataset.len(),
        a.fold,
        weights.display()
    );
    Ok(())
}

fn predict(a: PredictArgs, cfg: &mut RunConfig, force: bool) -> Result<()> {
    set(&mut cfg.tiling.n, a.n);
    set(&mut cfg.tiling.m, a.m);
    set(&mut cfg.threshold, a.threshold);
    let (prob_path, mask_path) = (suffixed(&a.out, "_prob"), suffixed(&a.out, "_mask"));
    refuse_overwrite(&suffixed(&prob_path, ".json"), force)?;
    refuse_overwrite(&suffixed(&mask_path, ".json"), force)?;

    let net = Network::<f32>::load(&a.weights).with_context(|| format!("loading weights {}", a.weights.display()))?;
    let d = a.d.unwrap_or(net.config().gap_d);
    let predictor = match a.mode {
        ModeArg::Df => Predictor::DirectionFused,
        ModeArg::SingleAxis => match (a.axis, a.seed) {
            (Some(ax), _) => Predictor::SingleAxis(axis(ax)),
            (None, Some(seed)) => Predictor::SingleAxis(default_axis(seed)),
            (None, None) => bail!("single-axis mode needs --axis or --seed"),
        },
    };
    let vol = load_volume(&a.volume)?;
    let prob = predict_volume(&net, &normalize(&vol), predictor, d, cfg.tiling)?;
    let mask = prob.threshold(cfg.threshold);
    save_volume(&prob, &prob_path)?;
    save_mask(&mask, prob.spacing_mm(), &mask_path)?;
    println!("predicted {} voxels above {}, wrote {} and {}", mask.count(), cfg.threshold, prob_path.display(), mask_path.display());
    Ok(())
}

fn localize_cmd(a: LocalizeArgs, cfg: &mut RunConfig, force: bool) -> Result<()> {
    set(&mut cfg.ransac.iters, a.iters);
    set(&mut cfg.ransac.threshold, a.threshold);
    set(&mut cfg.ransac.seed, a.seed);
    refuse_overwrite(&a.out, force)?;
    let (mask, _) = load_mask(&a.mask)?;
    let model = localize(&mask, &cfg.ransac)?;
    model.save(&a.out)?;
    let [p0, p1, p2] = model.control_points;
    println!("catheter through {p0:.1?} {p1:.1?} {p2:.1?}, {} inliers", model.score);
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    rows: Vec<EvalRow>,
    aggregate: dffcn_core::metrics::Aggregate,
}

fn eval(a: EvalArgs, force: bool) -> Result<()> {
    if let Some(out) = &a.out {
        refuse_overwrite(out, force)?;
    }
    let (manifest, root) = DatasetManifest::load(&a.data)?;
    if let Some(f) = a.fold {
        manifest.check_fold(f)?;
    }
    let mut rows = Vec::new();
    for m in manifest.members.iter().filter(|m| a.fold.is_none_or(|f| f == m.fold)) {
        let pred_mask = a.pred.join(format!("{}_mask", m.name));
        let model_path = a.pred.join(format!("{}_model.json", m.name));
        if !suffixed(&pred_mask, ".json").exists() || !model_path.exists() {
            rows.push(EvalRow { name: m.name.clone(), report: None });
            continue;
        }
        let (truth, spacing) = load_mask(m.mask_path(&root))?;
        let (pred, _) = load_mask(&pred_mask)?;
        let model = CatheterModel::load(&model_path)?;
        let report = evaluate(&pred, &truth, Some(&model.polyline), &skeleton_polyline(&truth)?, spacing)
            .with_context(|| format!("scoring {}", m.name))?;
        rows.push(EvalRow { name: m.name.clone(), report: Some(report) });
    }
    print!("{}", format_table(&rows));
    if let Some(out) = &a.out {
        let agg = aggregate(rows.iter().filter_map(|r| r.report.as_ref()).collect::<Vec<_>>());
        let text = serde_json::to_string_pretty(&EvalReport { rows, aggregate: agg })?;
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn sweep(a: SweepArgs, cfg: &mut RunConfig, force: bool) -> Result<()> {
    apply_train_flags(cfg, &a.flags)?;
    set(&mut cfg.tiling.n, a.n);
    set(&mut cfg.tiling.m, a.m);
    refuse_overwrite(&a.out, force)?;
    let (manifest, root) = DatasetManifest::load(&a.data)?;
    let cases = manifest
        .members
        .iter()
        .map(|m| {
            let (v, mask) = load_member(&root, m)?;
            Ok(Case::new(m.name.clone(), &v, mask)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let assignment: Vec<usize> = manifest.members.iter().map(|m| m.fold).collect();
    let modes: Vec<Mode> = a
        .modes
        .iter()
        .map(|m| match m {
            ModeArg::Df => Mode::DirectionFused,
            ModeArg::SingleAxis => Mode::SingleAxis(None),
        })
        .collect();
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let exp = cfg.experiment();
    let mut rows = Vec::new();
    for seed in seeds {
        rows.extend(sweep_d(&cases, &assignment, &modes, &a.d_values, seed, &exp)?);
    }
    std::fs::write(&a.out, sweep_csv(&rows)).with_context(|| format!("writing {}", a.out.display()))?;
    for r in &rows {
        println!("{:<12} d={} seed={} dice={:.3}", r.mode, r.d, r.seed, r.dice);
    }
    Ok(())
}
