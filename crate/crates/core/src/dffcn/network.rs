//! Parameter layout, initialization, persistence and the shared 2D FCN.
//!
//! The 2D network is an encoder of 3x3 convolution stages each followed by
//! max pooling, a three-layer bottleneck ending in two class channels, and
//! a decoder of transposed convolutions. After every transposed convolution
//! the encoder map of equal resolution is added (through a learned 1x1
//! projection when widths differ) and a convolution + ReLU follows. The
//! last decoder activation is the feature layer used for fusion; a 1x1
//! score convolution on top of it gives per-pixel class logits.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream, Rng};
use crate::tensor::{load_manifest, save_manifest, softmax2_with_nll, Array, Graph, ManifestEntry, Real, Tensor, WeightManifest};

use super::config::{NetConfig, INPUT_CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct DecoderIdx {
    up: usize,
    stride: usize,
    skip_stage: Option<usize>,
    skip_proj: Option<ConvIdx>,
    conv: ConvIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<Vec<ConvIdx>>,
    bottleneck: Vec<ConvIdx>,
    decoder: Vec<DecoderIdx>,
    score: ConvIdx,
    head: ConvIdx,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
}

fn build_layout(config: &NetConfig) -> (Layout, Vec<Spec>) {
    let mut specs = Vec::new();
    let conv = |specs: &mut Vec<Spec>, name: String, cout: usize, cin: usize, k: usize| {
        specs.push(Spec { name: format!("{name}.weight"), shape: vec![cout, cin, k, k] });
        specs.push(Spec { name: format!("{name}.bias"), shape: vec![cout] });
        ConvIdx { weight: specs.len() - 2, bias: specs.len() - 1 }
    };

    let mut cin = INPUT_CHANNELS;
    let mut stage_out = Vec::new();
    let encoder = config
        .stage_widths
        .iter()
        .enumerate()
        .map(|(s, widths)| {
            let layers = widths
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    let idx = conv(&mut specs, format!("enc{s}.conv{j}"), w, cin, 3);
                    cin = w;
                    idx
                })
                .collect();
            stage_out.push(cin);
            layers
        })
        .collect();

    let bottleneck = (0..3)
        .map(|j| {
            let w = config.bottleneck_widths[j];
            let idx = conv(&mut specs, format!("bottleneck{j}"), w, cin, config.bottleneck_kernels[j]);
            cin = w;
            idx
        })
        .collect();

    // Downscale factor log2: encoder stage s emits maps at 2^s.
    let mut level = config.num_pools() as i64;
    let decoder = config
        .decoder
        .iter()
        .enumerate()
        .map(|(i, st)| {
            specs.push(Spec { name: format!("dec{i}.up.weight"), shape: vec![cin, st.channels, st.kernel, st.kernel] });
            let up = specs.len() - 1;
            level -= st.stride.trailing_zeros() as i64;
            let skip_stage = (level >= 0 && (level as usize) < stage_out.len()).then_some(level as usize);
            let skip_proj = skip_stage
                .filter(|&s| stage_out[s] != st.channels)
                .map(|s| conv(&mut specs, format!("dec{i}.skip"), st.channels, stage_out[s], 1));
            let c = conv(&mut specs, format!("dec{i}.conv"), st.channels, st.channels, config.decoder_conv_kernel);
            cin = st.channels;
            DecoderIdx { up, stride: st.stride, skip_stage, skip_proj, conv: c }
        })
        .collect();

    let score = conv(&mut specs, "score".into(), 2, cin, 1);
    let hk = config.head_kernel;
    specs.push(Spec { name: "fusion_head.weight".into(), shape: vec![2, config.feature_channels, hk, hk, hk] });
    specs.push(Spec { name: "fusion_head.bias".into(), shape: vec![2] });
    let head = ConvIdx { weight: specs.len() - 2, bias: specs.len() - 1 };
    (Layout { encoder, bottleneck, decoder, score, head }, specs)
}

/// Output of the shared 2D network for one image.
#[derive(Clone, Copy, Debug)]
pub struct Forward2d {
    /// `[F, M, M]` activations after the final decoder ReLU.
    pub features: Tensor,
    /// `[2, M, M]` class logits.
    pub logits: Tensor,
}

/// The 2D FCN shared across slicing directions plus the 3D fusion head.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetConfig,
    params: Vec<Param<T>>,
    layout: Layout,
}

fn glorot_limit(shape: &[usize]) -> f64 {
    let receptive: usize = shape.iter().skip(2).product();
    let fan_out = shape[0] * receptive;
    let fan_in = shape.get(1).copied().unwrap_or(1) * receptive;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Real> Network<T> {
    /// Seeded initialization: weights uniform in `±sqrt(6 / (fan_in +
    /// fan_out))`, biases zero.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = rng_from(derive_seed(seed, stream::INIT, 0));
        let params = specs
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = if s.shape.len() == 1 {
                    vec![T::zero(); n]
                } else {
                    let lim = glorot_limit(&s.shape);
                    (0..n).map(|_| T::of_f64(rng.random_range(-lim..lim))).collect()
                };
                Param { name: s.name, shape: s.shape, data }
            })
            .collect();
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Convert every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn manifest(&self) -> WeightManifest {
        WeightManifest {
            entries: self.params.iter().map(|p| ManifestEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
            config: Some(serde_json::json!({ "net": self.config })),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: Vec<Vec<f32>> = self.params.iter().map(|p| p.data.iter().map(|v| v.as_f32()).collect()).collect();
        save_manifest(path, &self.manifest(), &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (manifest, tensors) = load_manifest(path)?;
        let config: NetConfig = manifest
            .config
            .as_ref()
            .and_then(|c| c.get("net"))
            .cloned()
            .ok_or_else(|| Error::Manifest("missing network config block".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Manifest(format!("bad network config: {e}"))))?;
        let mut net = Self::build(config, 0)?;
        if manifest.entries.len() != net.params.len() {
            return Err(Error::Manifest(format!(
                "manifest has {} tensors, network expects {}",
                manifest.entries.len(),
                net.params.len()
            )));
        }
        for ((entry, values), param) in manifest.entries.iter().zip(tensors).zip(&mut net.params) {
            if entry.name != param.name || entry.shape != param.shape {
                return Err(Error::Manifest(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, param.name, param.shape
                )));
            }
            param.data = values.into_iter().map(T::of_f32).collect();
        }
        Ok(net)
    }

    /// Replace encoder parameters with the `enc*` entries of an external
    /// manifest; other entries are ignored.
    pub fn import_encoder(&mut self, path: impl AsRef<Path>) -> Result<usize> {
        let (manifest, tensors) = load_manifest(path)?;
        let mut replaced = 0;
        for (entry, values) in manifest.entries.iter().zip(tensors) {
            if !entry.name.starts_with("enc") {
                continue;
            }
            let param = self
                .params
                .iter_mut()
                .find(|p| p.name == entry.name)
                .ok_or_else(|| Error::Manifest(format!("network has no encoder tensor {}", entry.name)))?;
            if param.shape != entry.shape {
                return Err(Error::Manifest(format!(
                    "encoder tensor {} has shape {:?}, network expects {:?}",
                    entry.name, entry.shape, param.shape
                )));
            }
            param.data = values.into_iter().map(T::of_f32).collect();
            replaced += 1;
        }
        Ok(replaced)
    }

    /// Register every parameter as a graph leaf, in layout order.
    pub fn register(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| g.leaf(Array { shape: p.shape.clone(), data: p.data.clone() }, requires_grad))
            .collect()
    }

    /// Gradients of all parameters present in `g`, zeros where none reached.
    pub fn collect_grads(&self, g: &Graph<T>, handles: &[Tensor], into: &mut [Vec<T>]) {
        for ((h, acc), p) in handles.iter().zip(into.iter_mut()).zip(&self.params) {
            if let Some(gr) = g.grad(*h) {
                debug_assert_eq!(gr.len(), p.data.len());
                acc.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    pub(crate) fn head_handles(&self, handles: &[Tensor]) -> (Tensor, Tensor) {
        (handles[self.layout.head.weight], handles[self.layout.head.bias])
    }

    pub(crate) fn head_params(&self) -> (&Param<T>, &Param<T>) {
        (&self.params[self.layout.head.weight], &self.params[self.layout.head.bias])
    }

    /// Record the 2D network on `image` (`[3, M, M]`).
    pub fn forward_2d_graph(
        &self,
        g: &mut Graph<T>,
        p: &[Tensor],
        image: Tensor,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Forward2d> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != INPUT_CHANNELS || shape[1] != shape[2] {
            return Err(Error::Shape(format!("2D input must be [3, M, M], got {shape:?}")));
        }
        self.config.check_input_size(shape[1])?;
        let conv = |g: &mut Graph<T>, x: Tensor, c: ConvIdx| g.conv2d(x, p[c.weight], p[c.bias], 1, true);

        let mut x = image;
        let mut skips = Vec::with_capacity(self.layout.encoder.len());
        for stage in &self.layout.encoder {
            for &c in stage {
                let y = conv(g, x, c)?;
                x = g.relu(y);
            }
            skips.push(x);
            x = g.maxpool2d(x)?;
        }
        for (j, &c) in self.layout.bottleneck.iter().enumerate() {
            x = conv(g, x, c)?;
            if j < 2 {
                x = g.relu(x);
                x = g.dropout(x, self.config.p_drop, training, rng)?;
            }
        }
        for stage in &self.layout.decoder {
            x = g.deconv2d(x, p[stage.up], stage.stride)?;
            if let Some(s) = stage.skip_stage {
                let skip = match stage.skip_proj {
                    Some(c) => conv(g, skips[s], c)?,
                    None => skips[s],
                };
                x = g.add(x, skip)?;
            }
            let y = conv(g, x, stage.conv)?;
            x = g.relu(y);
        }
        let logits = conv(g, x, self.layout.score)?;
        Ok(Forward2d { features: x, logits })
    }

    /// Inference on one `[3, M, M]` image: `(features [F, M, M], probs [2, M, M])`.
    pub fn forward_2d(&self, image: &[T], size: usize, training: bool, rng: &mut Rng) -> Result<(Array<T>, Array<T>)> {
        let mut g = Graph::new();
        let p = self.register(&mut g, false);
        let x = g.leaf_from(&[INPUT_CHANNELS, size, size], image.to_vec(), false)?;
        let out = self.forward_2d_graph(&mut g, &p, x, training, rng)?;
        let (probs, _) = softmax2_with_nll(g.value(out.logits), None);
        Ok((g.array(out.features).clone(), Array { shape: vec![2, size, size], data: probs }))
    }
}
