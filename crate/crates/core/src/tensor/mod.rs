//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] records every operation applied to its [`Tensor`] handles in
//! creation order, which is already a topological order, so the backward
//! pass is a single reverse sweep over the node list.

mod adam;
pub mod kernels;
mod manifest;
mod real;

pub use adam::{AdamConfig, AdamState};
pub use manifest::{load_manifest, save_manifest, ManifestEntry, WeightManifest};
pub use real::{Real, Strategy};

use rand::Rng as _;

use crate::error::{Error, Result};
use kernels::{Conv2dGeom, Conv3dGeom, Deconv2dGeom};

/// Plain dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Sum(Tensor),
    Relu(Tensor),
    Dropout { input: Tensor, scale: Vec<T> },
    Conv2d { input: Tensor, kernel: Tensor, bias: Tensor, geom: Conv2dGeom },
    Conv3d { input: Tensor, kernel: Tensor, bias: Tensor, geom: Conv3dGeom },
    Deconv2d { input: Tensor, kernel: Tensor, geom: Deconv2dGeom },
    MaxPool2d { input: Tensor, argmax: Vec<usize> },
    SoftmaxCe { logits: Tensor, target: Vec<u8>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation over tensors of scalar type `T`.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, requires_grad: bool, op: Op<T>) -> Tensor {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Tensor(self.nodes.len() - 1)
    }

    fn node(&self, t: Tensor) -> &Node<T> {
        &self.nodes[t.0]
    }

    /// Input tensor (`requires_grad = true` for parameters and for inputs
    /// whose gradient is wanted).
    pub fn leaf(&mut self, value: Array<T>, requires_grad: bool) -> Tensor {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Tensor> {
        Ok(self.leaf(Array::new(shape.to_vec(), data)?, requires_grad))
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.node(t).value.shape
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.node(t).value.data
    }

    pub fn array(&self, t: Tensor) -> &Array<T> {
        &self.node(t).value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.node(t).requires_grad
    }

    /// Gradient accumulated by the last backward pass(es), if any reached `t`.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.node(t).grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn dims<const N: usize>(&self, t: Tensor, what: &str) -> Result<[usize; N]> {
        self.shape(t)
            .try_into()
            .map_err(|_| Error::Shape(format!("{what}: expected rank {N}, got shape {:?}", self.shape(t))))
    }

    fn any_grad(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|&t| self.requires_grad(t))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let value = Array { shape: self.shape(a).to_vec(), data };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let value = Array { shape: self.shape(a).to_vec(), data };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Sum of all elements as a scalar (shape `[]`).
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).iter().copied().sum();
        let rg = self.requires_grad(a);
        self.push(Array { shape: vec![], data: vec![s] }, rg, Op::Sum(a))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let data = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let value = Array { shape: self.shape(a).to_vec(), data };
        let rg = self.requires_grad(a);
        self.push(value, rg, Op::Relu(a))
    }

    /// Hash of the branch taken by every non-smooth op: ReLU on/off states
    /// and max-pool winners. Evaluations with equal signatures lie in the
    /// same linear piece of those ops, where finite differences are valid.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(_) => {
                    i.hash(&mut h);
                    for v in &node.value.data {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `p_drop` and survivors are scaled by `1 / (1 - p_drop)`; otherwise the
    /// identity.
    pub fn dropout(&mut self, a: Tensor, p_drop: f64, training: bool, rng: &mut crate::rng::Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::InvalidArgument(format!("dropout probability {p_drop} outside [0, 1)")));
        }
        if !training || p_drop == 0.0 {
            return Ok(a);
        }
        let keep = T::of_f64(1.0 / (1.0 - p_drop));
        let scale: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p_drop { T::zero() } else { keep })
            .collect();
        let data = self.value(a).iter().zip(&scale).map(|(&x, &s)| x * s).collect();
        let value = Array { shape: self.shape(a).to_vec(), data };
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Dropout { input: a, scale }))
    }

    /// 2D cross-correlation of `[cin, h, w]` with `[cout, cin, kh, kw]` plus
    /// bias. `same_pad` zero-pads by `(k - 1) / 2` (odd kernels only).
    pub fn conv2d(&mut self, input: Tensor, kernel: Tensor, bias: Tensor, stride: usize, same_pad: bool) -> Result<Tensor> {
        let idims = self.dims::<3>(input, "conv2d input")?;
        let kdims = self.dims::<4>(kernel, "conv2d kernel")?;
        if self.shape(bias) != [kdims[0]] {
            return Err(Error::Shape(format!("conv2d bias {:?} vs {} outputs", self.shape(bias), kdims[0])));
        }
        let pad = if same_pad {
            if kdims[2] % 2 == 0 || kdims[2] != kdims[3] {
                return Err(Error::InvalidArgument(format!(
                    "same padding needs a square odd kernel, got {}x{}",
                    kdims[2], kdims[3]
                )));
            }
            kdims[2] / 2
        } else {
            0
        };
        let geom = Conv2dGeom::new(idims, kdims, stride, pad)?;
        let data = kernels::conv2d_forward(&geom, self.value(input), self.value(kernel), self.value(bias));
        let value = Array { shape: vec![geom.cout, geom.ho, geom.wo], data };
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(value, rg, Op::Conv2d { input, kernel, bias, geom }))
    }

    /// 3D cross-correlation of `[cin, d, h, w]` with `[cout, cin, kd, kh, kw]`
    /// plus bias, stride 1.
    pub fn conv3d(&mut self, input: Tensor, kernel: Tensor, bias: Tensor, same_pad: bool) -> Result<Tensor> {
        let idims = self.dims::<4>(input, "conv3d input")?;
        let kdims = self.dims::<5>(kernel, "conv3d kernel")?;
        if self.shape(bias) != [kdims[0]] {
            return Err(Error::Shape(format!("conv3d bias {:?} vs {} outputs", self.shape(bias), kdims[0])));
        }
        let ks = [kdims[2], kdims[3], kdims[4]];
        let pad = if same_pad {
            if ks.iter().any(|k| k % 2 == 0) {
                return Err(Error::InvalidArgument(format!("same padding needs odd kernels, got {ks:?}")));
            }
            ks.map(|k| k / 2)
        } else {
            [0; 3]
        };
        let geom = Conv3dGeom::new(idims, kdims, pad)?;
        let data = kernels::conv3d_forward(&geom, self.value(input), self.value(kernel), self.value(bias));
        let [d, h, w] = geom.out;
        let value = Array { shape: vec![geom.cout, d, h, w], data };
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(value, rg, Op::Conv3d { input, kernel, bias, geom }))
    }

    /// Transposed convolution `[cin, h, w]` x `[cin, cout, kh, kw]` ->
    /// `[cout, h*stride, w*stride]`.
    pub fn deconv2d(&mut self, input: Tensor, kernel: Tensor, stride: usize) -> Result<Tensor> {
        let idims = self.dims::<3>(input, "deconv2d input")?;
        let kdims = self.dims::<4>(kernel, "deconv2d kernel")?;
        let geom = Deconv2dGeom::new(idims, kdims, stride)?;
        let data = kernels::deconv2d_forward(&geom, self.value(input), self.value(kernel));
        let (oh, ow) = geom.out_hw();
        let value = Array { shape: vec![geom.cout, oh, ow], data };
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(value, rg, Op::Deconv2d { input, kernel, geom }))
    }

    /// 2x2 max pooling with stride 2 over `[c, h, w]`.
    pub fn maxpool2d(&mut self, input: Tensor) -> Result<Tensor> {
        let [c, h, w] = self.dims::<3>(input, "maxpool2d input")?;
        let (data, argmax) = kernels::maxpool2d_forward(self.value(input), [c, h, w])?;
        let value = Array { shape: vec![c, h / 2, w / 2], data };
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::MaxPool2d { input, argmax }))
    }

    /// Two-class softmax cross-entropy over `[2, ...spatial]` logits, averaged
    /// over spatial positions. Returns the scalar loss tensor; per-position
    /// probabilities are available through [`Graph::softmax_probs`].
    pub fn softmax_ce(&mut self, logits: Tensor, target: &[u8]) -> Result<Tensor> {
        let shape = self.shape(logits);
        if shape.first() != Some(&2) {
            return Err(Error::Shape(format!("softmax_ce needs 2 classes, got shape {shape:?}")));
        }
        let n = self.value(logits).len() / 2;
        if target.len() != n {
            return Err(Error::Shape(format!("softmax_ce target has {} entries, expected {n}", target.len())));
        }
        if let Some(bad) = target.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidArgument(format!("target label {bad} is not binary")));
        }
        let (probs, loss) = softmax2_with_nll(self.value(logits), Some(target));
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Array { shape: vec![], data: vec![loss] },
            rg,
            Op::SoftmaxCe { logits, target: target.to_vec(), probs },
        ))
    }

    /// Probabilities recorded by a `softmax_ce` node.
    pub fn softmax_probs(&self, loss: Tensor) -> Option<&[T]> {
        match &self.node(loss).op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Back-propagate from a scalar tensor.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.value(loss).len() != 1 || !self.shape(loss).iter().all(|&d| d == 1) {
            return Err(Error::Shape(format!("backward needs a scalar, got shape {:?}", self.shape(loss))));
        }
        self.backward_from(loss, vec![T::one()])
    }

    /// Back-propagate an arbitrary upstream gradient `seed` for `t`.
    /// Gradients accumulate into existing ones.
    pub fn backward_from(&mut self, t: Tensor, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(t).len() {
            return Err(Error::Shape(format!(
                "seed gradient has {} values, tensor has {}",
                seed.len(),
                self.value(t).len()
            )));
        }
        if !self.requires_grad(t) {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[t.0] = Some(seed);
        for i in (0..=t.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            for (input, gi) in self.local_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut pending[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients of node `i`'s output w.r.t. each of its inputs.
    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Tensor, Vec<T>)> {
        let node = &self.nodes[i];
        let wants = |t: Tensor| self.requires_grad(t);
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Relu(a) => {
                let grad = self
                    .value(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*a, grad)]
            }
            Op::Dropout { input, scale } => vec![(*input, g.iter().zip(scale).map(|(&g, &s)| g * s).collect())],
            Op::Conv2d { input, kernel, bias, geom } => {
                if !self.any_grad(&[*input, *kernel, *bias]) {
                    return vec![];
                }
                let gr = kernels::conv2d_backward(geom, self.value(*input), self.value(*kernel), g);
                vec![(*input, gr.input), (*kernel, gr.kernel), (*bias, gr.bias)]
            }
            Op::Conv3d { input, kernel, bias, geom } => {
                let gr = kernels::conv3d_backward(geom, self.value(*input), self.value(*kernel), g);
                vec![(*input, gr.input), (*kernel, gr.kernel), (*bias, gr.bias)]
            }
            Op::Deconv2d { input, kernel, geom } => {
                let gr = kernels::deconv2d_backward(geom, self.value(*input), self.value(*kernel), g);
                vec![(*input, gr.input), (*kernel, gr.kernel)]
            }
            Op::MaxPool2d { input, argmax } => {
                if !wants(*input) {
                    return vec![];
                }
                vec![(*input, kernels::maxpool2d_backward(argmax, g, self.value(*input).len()))]
            }
            Op::SoftmaxCe { logits, target, probs } => {
                let n = target.len();
                let scale = g[0] / T::of_f64(n as f64);
                let mut grad = probs.clone();
                for (v, &t) in target.iter().enumerate() {
                    grad[t as usize * n + v] -= T::one();
                }
                grad.iter_mut().for_each(|x| *x *= scale);
                vec![(*logits, grad)]
            }
        }
    }
}

/// Channel softmax over `[2, n]` logits. With a target, also returns the
/// mean negative log-likelihood.
pub fn softmax2_with_nll<T: Real>(logits: &[T], target: Option<&[u8]>) -> (Vec<T>, T) {
    let n = logits.len() / 2;
    let (l0, l1) = logits.split_at(n);
    let mut probs = vec![T::zero(); 2 * n];
    let mut total = T::zero();
    for v in 0..n {
        let m = l0[v].max(l1[v]);
        let e0 = (l0[v] - m).exp();
        let e1 = (l1[v] - m).exp();
        let z = e0 + e1;
        probs[v] = e0 / z;
        probs[n + v] = e1 / z;
        if let Some(t) = target {
            let lt = if t[v] == 0 { l0[v] } else { l1[v] };
            total += m + z.ln() - lt;
        }
    }
    let loss = if n > 0 { total / T::of_f64(n as f64) } else { T::zero() };
    (probs, loss)
}

#[cfg(test)]
mod tests;
