//! Direction-fused forward pass, the single-axis baseline, and their losses.
//!
//! Each plane image gets its own small graph so the 3M images of a patch can
//! run independently. Gradients flow back through the fusion head into the
//! fused feature volume, are cut per plane (fusion is a sum, so every axis
//! receives the same volume gradient) and seeded into the plane graphs.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{child_rng, derive_seed, rng_from, stream};
use crate::slicer::{fuse, plane_voxel, slice_axis, stack_features, unstack_features, Axis, FeatureVolume};
use crate::tensor::{softmax2_with_nll, Graph, Real, Tensor};
use crate::volume::{Mask3, Volume3};

use super::config::INPUT_CHANNELS;
use super::network::{Forward2d, Network};

struct PlaneRun<T> {
    graph: Graph<T>,
    params: Vec<Tensor>,
    out: Forward2d,
}

/// Dropout randomness for one plane image: independent per (axis, plane).
fn plane_seed(seed: u64, axis: Axis, k: usize) -> u64 {
    derive_seed(seed, stream::DROPOUT, (axis.index() * 1_000_000 + k) as u64)
}

fn run_planes<T: Real>(
    net: &Network<T>,
    patch: &Volume3,
    axis: Axis,
    d: usize,
    with_grad: bool,
    dropout_seed: Option<u64>,
) -> Result<Vec<PlaneRun<T>>> {
    let stack = slice_axis::<T>(patch, axis, d)?;
    let m = stack.size;
    net.config().check_input_size(m)?;
    stack
        .images
        .into_par_iter()
        .enumerate()
        .map(|(k, img)| {
            let mut g = Graph::new();
            let params = net.register(&mut g, with_grad);
            let x = g.leaf_from(&[INPUT_CHANNELS, m, m], img, false)?;
            let mut rng = rng_from(dropout_seed.map_or(0, |s| plane_seed(s, axis, k)));
            let out = net.forward_2d_graph(&mut g, &params, x, dropout_seed.is_some(), &mut rng)?;
            Ok(PlaneRun { graph: g, params, out })
        })
        .collect()
}

fn check_patch(patch: &Volume3, d: usize) -> Result<usize> {
    if !patch.is_cubic() {
        return Err(Error::Shape(format!("patch must be cubic, got {:?}", patch.dims())));
    }
    if d > super::config::MAX_GAP {
        return Err(Error::InvalidArgument(format!("gap d={d} outside [0, {}]", super::config::MAX_GAP)));
    }
    Ok(patch.dims()[0])
}

/// Feature volume of one slicing direction, before fusion.
pub fn axis_features<T: Real>(net: &Network<T>, patch: &Volume3, axis: Axis, d: usize) -> Result<FeatureVolume<T>> {
    check_patch(patch, d)?;
    let runs = run_planes(net, patch, axis, d, false, None)?;
    let maps: Vec<Vec<T>> = runs.iter().map(|r| r.graph.value(r.out.features).to_vec()).collect();
    stack_features(&maps, net.config().feature_channels, axis)
}

/// The summed feature volume the 3D head consumes.
pub fn fused_features<T: Real>(net: &Network<T>, patch: &Volume3, d: usize) -> Result<FeatureVolume<T>> {
    let [fx, fy, fz] = [Axis::X, Axis::Y, Axis::Z].map(|a| axis_features(net, patch, a, d));
    fuse(&fx?, &fy?, &fz?)
}

fn head_logits<T: Real>(net: &Network<T>, fused: &FeatureVolume<T>) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let (w, b) = net.head_params();
    let m = fused.size;
    let x = g.leaf_from(&[fused.channels, m, m, m], fused.data.clone(), false)?;
    let w = g.leaf_from(&w.shape, w.data.clone(), false)?;
    let b = g.leaf_from(&b.shape, b.data.clone(), false)?;
    let y = g.conv3d(x, w, b, true)?;
    Ok(g.value(y).to_vec())
}

fn catheter_volume<T: Real>(probs: &[T], patch: &Volume3) -> Result<Volume3> {
    let n = probs.len() / 2;
    Volume3::new(patch.dims(), patch.spacing_mm(), probs[n..].iter().map(|p| p.as_f32()).collect())
}

/// Per-voxel catheter probability of a DF-FCN patch prediction.
pub fn forward_df<T: Real>(net: &Network<T>, patch: &Volume3, d: usize) -> Result<Volume3> {
    let fused = fused_features(net, patch, d)?;
    let (probs, _) = softmax2_with_nll(&head_logits(net, &fused)?, None);
    catheter_volume(&probs, patch)
}

/// The baseline's slicing direction when none is given.
pub fn default_axis(seed: u64) -> Axis {
    Axis::ALL[child_rng(seed, stream::AXIS, 0).random_range(0..3)]
}

/// Per-plane 2D predictions stacked back along `axis`; no fusion head.
pub fn forward_single_axis<T: Real>(net: &Network<T>, patch: &Volume3, d: usize, axis: Axis) -> Result<Volume3> {
    check_patch(patch, d)?;
    let runs = run_planes(net, patch, axis, d, false, None)?;
    let maps: Vec<Vec<T>> = runs.iter().map(|r| softmax2_with_nll(r.graph.value(r.out.logits), None).0).collect();
    let probs = stack_features(&maps, 2, axis)?;
    catheter_volume(&probs.data, patch)
}

/// Loss and parameter gradients for one labelled patch.
#[derive(Clone, Debug)]
pub struct LossGrads<T> {
    pub loss: T,
    /// One buffer per network parameter, in layout order.
    pub grads: Vec<Vec<T>>,
    /// Combined [`Graph::branch_signature`] of every plane graph.
    pub branches: u64,
}

fn combine_branches<'a, T: Real + 'a>(graphs: impl IntoIterator<Item = &'a Graph<T>>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for g in graphs {
        g.branch_signature().hash(&mut h);
    }
    h.finish()
}

fn check_label(patch: &Volume3, label: &Mask3) -> Result<()> {
    if label.dims() != patch.dims() {
        return Err(Error::Shape(format!("label {:?} does not match patch {:?}", label.dims(), patch.dims())));
    }
    Ok(())
}

/// Mean voxel cross-entropy of the DF-FCN prediction and its gradients.
/// `dropout_seed = None` evaluates in inference mode.
pub fn df_loss_and_grads<T: Real>(
    net: &Network<T>,
    patch: &Volume3,
    label: &Mask3,
    d: usize,
    dropout_seed: Option<u64>,
) -> Result<LossGrads<T>> {
    check_patch(patch, d)?;
    check_label(patch, label)?;
    let per_axis = Axis::ALL
        .iter()
        .map(|&axis| run_planes(net, patch, axis, d, true, dropout_seed))
        .collect::<Result<Vec<_>>>()?;
    let f = net.config().feature_channels;
    let stacked: Vec<FeatureVolume<T>> = Axis::ALL
        .iter()
        .zip(&per_axis)
        .map(|(&axis, runs)| {
            let maps: Vec<Vec<T>> = runs.iter().map(|r| r.graph.value(r.out.features).to_vec()).collect();
            stack_features(&maps, f, axis)
        })
        .collect::<Result<_>>()?;
    let fused = fuse(&stacked[0], &stacked[1], &stacked[2])?;
    let branches = combine_branches(per_axis.iter().flatten().map(|r| &r.graph));

    let m = fused.size;
    let mut head = Graph::new();
    let params = net.register(&mut head, true);
    let (w, b) = net.head_handles(&params);
    let x = head.leaf_from(&[f, m, m, m], fused.data, true)?;
    let logits = head.conv3d(x, w, b, true)?;
    let loss = head.softmax_ce(logits, label.labels())?;
    head.backward(loss)?;
    let loss_value = head.value(loss)[0];

    let mut grads = net.zero_grads();
    net.collect_grads(&head, &params, &mut grads);
    let dfused = FeatureVolume { channels: f, size: m, data: head.grad(x).expect("fused input requires grad").to_vec() };
    for (axis, runs) in Axis::ALL.into_iter().zip(per_axis) {
        let seeds = unstack_features(&dfused, axis);
        let plane_grads: Vec<Vec<Vec<T>>> = runs
            .into_par_iter()
            .zip(seeds)
            .map(|(mut r, seed)| {
                r.graph.backward_from(r.out.features, seed)?;
                let mut acc = net.zero_grads();
                net.collect_grads(&r.graph, &r.params, &mut acc);
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for pg in plane_grads {
            accumulate(&mut grads, &pg);
        }
    }
    Ok(LossGrads { loss: loss_value, grads, branches })
}

fn accumulate<T: Real>(into: &mut [Vec<T>], from: &[Vec<T>]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
    }
}

/// Mean voxel cross-entropy of the single-axis baseline along `axis`.
pub fn single_axis_loss_and_grads<T: Real>(
    net: &Network<T>,
    patch: &Volume3,
    label: &Mask3,
    d: usize,
    axis: Axis,
    dropout_seed: Option<u64>,
) -> Result<LossGrads<T>> {
    let m = check_patch(patch, d)?;
    check_label(patch, label)?;
    let runs = run_planes(net, patch, axis, d, true, dropout_seed)?;
    let branches = combine_branches(runs.iter().map(|r| &r.graph));
    let scale = T::one() / T::of_f64(m as f64);
    let per_plane: Vec<(T, Vec<Vec<T>>)> = runs
        .into_par_iter()
        .enumerate()
        .map(|(k, mut r)| {
            let target: Vec<u8> = (0..m * m)
                .map(|i| {
                    let [x, y, z] = plane_voxel(axis, k, i / m, i % m);
                    u8::from(label.get(x, y, z))
                })
                .collect();
            let loss = r.graph.softmax_ce(r.out.logits, &target)?;
            r.graph.backward_from(loss, vec![scale])?;
            let mut acc = net.zero_grads();
            net.collect_grads(&r.graph, &r.params, &mut acc);
            Ok((r.graph.value(loss)[0], acc))
        })
        .collect::<Result<_>>()?;
    let mut grads = net.zero_grads();
    let mut loss = T::zero();
    for (l, g) in per_plane {
        loss += l;
        accumulate(&mut grads, &g);
    }
    Ok(LossGrads { loss: loss * scale, grads, branches })
}
