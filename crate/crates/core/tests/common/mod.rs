#![allow(dead_code)]

use std::collections::VecDeque;

use dffcn_core::dffcn::{LossGrads, Network};
use dffcn_core::rng::rng_from;
use dffcn_core::slicer::FeatureVolume;
use dffcn_core::tensor::{Graph, Tensor};
use dffcn_core::volume::{Mask3, Volume3};
use rand::Rng;

pub fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_volume(m: usize, seed: u64) -> Volume3 {
    let mut rng = rng_from(seed);
    Volume3::from_fn([m; 3], [1.0; 3], |_, _, _| rng.random::<f32>()).unwrap()
}

pub fn random_mask(dims: [usize; 3], density: f64, seed: u64) -> Mask3 {
    let mut rng = rng_from(seed);
    Mask3::from_fn(dims, |_, _, _| rng.random_bool(density)).unwrap()
}

/// Volume with axes relabelled cyclically: out(x, y, z) = v(y, z, x).
pub fn cycle_axes(v: &Volume3) -> Volume3 {
    let [nx, ny, nz] = v.dims();
    Volume3::from_fn([nz, nx, ny], v.spacing_mm(), |x, y, z| v.get(y, z, x)).unwrap()
}

/// Any axis permutation: out coordinate `i` reads source axis `perm[i]`.
pub fn permute_axes(v: &Volume3, perm: [usize; 3]) -> Volume3 {
    let d = v.dims();
    Volume3::from_fn([d[perm[0]], d[perm[1]], d[perm[2]]], v.spacing_mm(), |x, y, z| {
        let out = [x, y, z];
        let mut src = [0; 3];
        for i in 0..3 {
            src[perm[i]] = out[i];
        }
        v.get(src[0], src[1], src[2])
    })
    .unwrap()
}

pub const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];

/// Central-difference check of `build`'s scalar output against the graph's
/// analytic gradient. Samples up to `samples` entries per leaf and returns
/// the worst relative error `|a - n| / max(|a|, |n|, 1e-7)`.
/// Named op under test: leaf shapes and values, and the graph it builds.
pub type GradCase = (&'static str, Vec<(Vec<usize>, Vec<f64>)>, Box<dyn Fn(&mut Graph<f64>, &[Tensor]) -> Tensor>);

pub fn gradcheck(leaves: &[(Vec<usize>, Vec<f64>)], samples: usize, seed: u64, build: impl Fn(&mut Graph<f64>, &[Tensor]) -> Tensor) -> (f64, usize) {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut g = Graph::new();
        let ts: Vec<Tensor> = leaves.iter().zip(vals).map(|((s, _), v)| g.leaf_from(s, v.clone(), true).unwrap()).collect();
        let out = build(&mut g, &ts);
        g.value(out)[0]
    };
    let mut g = Graph::new();
    let ts: Vec<Tensor> = leaves.iter().map(|(s, v)| g.leaf_from(s, v.clone(), true).unwrap()).collect();
    let out = build(&mut g, &ts);
    g.backward(out).unwrap();
    let mut rng = rng_from(seed);
    let h = 1e-4;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (li, (_, v)) in leaves.iter().enumerate() {
        let analytic = g.grad(ts[li]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; v.len()]);
        let idx: Vec<usize> =
            if v.len() <= samples { (0..v.len()).collect() } else { (0..samples).map(|_| rng.random_range(0..v.len())).collect() };
        for i in idx {
            let mut vals: Vec<Vec<f64>> = leaves.iter().map(|(_, v)| v.clone()).collect();
            vals[li][i] += h;
            let up = eval(&vals);
            vals[li][i] -= 2.0 * h;
            let down = eval(&vals);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Random-weighted sum: a scalar whose gradient exercises every output.
pub fn project(g: &mut Graph<f64>, t: Tensor, seed: u64) -> Tensor {
    let shape = g.shape(t).to_vec();
    let n = g.value(t).len();
    let r = g.leaf_from(&shape, random(n, seed), false).unwrap();
    let p = g.mul(t, r).unwrap();
    g.sum(p)
}

pub fn conv2d_oracle(input: &[f64], [cin, h, w]: [usize; 3], kernel: &[f64], [cout, _, kh, kw]: [usize; 4], bias: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(cout * ho * wo);
    for co in 0..cout {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += kernel[((co * cin + ci) * kh + ky) * kw + kx] * input[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn conv3d_oracle(input: &[f64], [cin, d, h, w]: [usize; 4], kernel: &[f64], [cout, _, kd, kh, kw]: [usize; 5], bias: &[f64], pad: usize) -> Vec<f64> {
    let (od, oh, ow) = (d + 2 * pad - kd + 1, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut out = Vec::with_capacity(cout * od * oh * ow);
    for co in 0..cout {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for a in 0..kd {
                            for b in 0..kh {
                                for c in 0..kw {
                                    let (iz, iy, ix) = ((z + a) as isize - pad as isize, (y + b) as isize - pad as isize, (x + c) as isize - pad as isize);
                                    if iz < 0 || iy < 0 || ix < 0 || iz as usize >= d || iy as usize >= h || ix as usize >= w {
                                        continue;
                                    }
                                    acc += kernel[(((co * cin + ci) * kd + a) * kh + b) * kw + c]
                                        * input[((ci * d + iz as usize) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution, cropped to `H*s x W*s`.
pub fn deconv_oracle(input: &[f64], [cin, h, w]: [usize; 3], kernel: &[f64], [_, cout, kh, kw]: [usize; 4], s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; cout * oh * ow];
    for ci in 0..cin {
        for y in 0..h {
            for x in 0..w {
                for co in 0..cout {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (oy, ox) = (y * s + ky, x * s + kx);
                            if oy < oh && ox < ow {
                                out[(co * oh + oy) * ow + ox] += input[(ci * h + y) * w + x] * kernel[((ci * cout + co) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(input: &[f64], [c, h, w]: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(input[(ch * h + 2 * y + dy) * w + 2 * x + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Flood fill with an explicit 26-neighbour offset list. Returns, for each
/// positive voxel in linear order, the id of its component (ids in order of
/// discovery).
pub fn flood_fill_oracle(mask: &Mask3) -> Vec<u32> {
    let [nx, ny, nz] = mask.dims();
    let mut offsets = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dx, dy, dz) != (0, 0, 0) {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    let idx = |x: i64, y: i64, z: i64| (x + nx as i64 * (y + ny as i64 * z)) as usize;
    let mut label = vec![0u32; nx * ny * nz];
    let mut next = 0;
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                if !mask.get(x as usize, y as usize, z as usize) || label[idx(x, y, z)] != 0 {
                    continue;
                }
                next += 1;
                let mut q = VecDeque::from([(x, y, z)]);
                label[idx(x, y, z)] = next;
                while let Some((a, b, c)) = q.pop_front() {
                    for &(dx, dy, dz) in &offsets {
                        let (p, r, s) = (a + dx, b + dy, c + dz);
                        if p < 0 || r < 0 || s < 0 || p >= nx as i64 || r >= ny as i64 || s >= nz as i64 {
                            continue;
                        }
                        if mask.get(p as usize, r as usize, s as usize) && label[idx(p, r, s)] == 0 {
                            label[idx(p, r, s)] = next;
                            q.push_back((p, r, s));
                        }
                    }
                }
            }
        }
    }
    label
}

/// Direct double loop over voxel pairs.
pub fn ahd_oracle(a: &Mask3, b: &Mask3) -> f64 {
    let pa = a.positives();
    let pb = b.positives();
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d = ((p[0] as f64 - q[0] as f64).powi(2) + (p[1] as f64 - q[1] as f64).powi(2) + (p[2] as f64 - q[2] as f64).powi(2)).sqrt();
                best = best.min(d);
            }
            total += best;
        }
        total / from.len() as f64
    };
    0.5 * (directed(&pa, &pb) + directed(&pb, &pa))
}

/// Point-to-polyline distance by projecting on every segment.
pub fn polyline_distance_oracle(p: [f64; 3], pts: &[[f64; 3]]) -> f64 {
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab: Vec<f64> = (0..3).map(|i| b[i] - a[i]).collect();
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        let t = if len2 == 0.0 { 0.0 } else { ((0..3).map(|i| (p[i] - a[i]) * ab[i]).sum::<f64>() / len2).clamp(0.0, 1.0) };
        let d = (0..3).map(|i| (p[i] - a[i] - t * ab[i]).powi(2)).sum::<f64>().sqrt();
        best = best.min(d);
    }
    if pts.len() == 1 {
        best = (0..3).map(|i| (p[i] - pts[0][i]).powi(2)).sum::<f64>().sqrt();
    }
    best
}

/// Natural cubic spline through `pts` at knots `t` via the Thomas algorithm,
/// evaluated at `u`; one coordinate at a time.
pub fn natural_spline_oracle(t: &[f64], pts: &[[f64; 3]], u: f64) -> [f64; 3] {
    let n = t.len();
    let h: Vec<f64> = (0..n - 1).map(|i| t[i + 1] - t[i]).collect();
    let mut out = [0.0; 3];
    for c in 0..3 {
        let y: Vec<f64> = pts.iter().map(|p| p[c]).collect();
        // Interior system for second derivatives, natural ends.
        let m_inner = n - 2;
        let mut diag = vec![0.0; m_inner];
        let mut upper = vec![0.0; m_inner];
        let mut lower = vec![0.0; m_inner];
        let mut rhs = vec![0.0; m_inner];
        for i in 1..n - 1 {
            let k = i - 1;
            lower[k] = h[i - 1];
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            upper[k] = h[i];
            rhs[k] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        for k in 1..m_inner {
            let w = lower[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            rhs[k] -= w * rhs[k - 1];
        }
        let mut m = vec![0.0; n];
        for k in (0..m_inner).rev() {
            let next = if k + 1 < m_inner { m[k + 2] } else { 0.0 };
            m[k + 1] = (rhs[k] - upper[k] * next) / diag[k];
        }
        let i = (0..n - 1).find(|&i| u <= t[i + 1]).unwrap_or(n - 2);
        let (a, b) = (t[i + 1] - u, u - t[i]);
        out[c] = m[i] * a.powi(3) / (6.0 * h[i]) + m[i + 1] * b.powi(3) / (6.0 * h[i]) + (y[i] / h[i] - m[i] * h[i] / 6.0) * a + (y[i + 1] / h[i] - m[i + 1] * h[i] / 6.0) * b;
    }
    out
}

/// Feature volume with axes relabelled like `cycle_axes`.
pub fn cycle_features<T: Copy>(f: &FeatureVolume<T>) -> Vec<T> {
    let m = f.size;
    let mut out = Vec::with_capacity(f.data.len());
    for c in 0..f.channels {
        for z in 0..m {
            for y in 0..m {
                for x in 0..m {
                    out.push(f.data[((c * m + x) * m + z) * m + y]);
                }
            }
        }
    }
    out
}

// Central differences are only meaningful when both probes stay in the same
// linear piece of every ReLU and max-pool; probes that cross a kink are
// redrawn. Returns the worst error over `samples` clean probes.
pub fn fd_check_network(loss: impl Fn(&Network<f64>) -> LossGrads<f64>, net: &Network<f64>, samples: usize, seed: u64) -> f64 {
    let analytic = loss(net);
    let mut rng = dffcn_core::rng::rng_from(seed);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = net.params().iter().map(|p| p.data.len()).collect();
    let (mut clean, mut drawn) = (0, 0);
    while clean < samples {
        drawn += 1;
        assert!(drawn <= 10 * samples, "only {clean} of {drawn} probes avoided a kink");
        let pi = rng.random_range(0..sizes.len());
        let i = rng.random_range(0..sizes[pi]);
        let mut up = net.clone();
        up.params_mut()[pi].data[i] += h;
        let mut down = net.clone();
        down.params_mut()[pi].data[i] -= h;
        let (lu, ld) = (loss(&up), loss(&down));
        if lu.branches != analytic.branches || ld.branches != analytic.branches {
            continue;
        }
        clean += 1;
        let numeric = (lu.loss - ld.loss) / (2.0 * h);
        worst = worst.max(rel_err(analytic.grads[pi][i], numeric));
    }
    worst
}
