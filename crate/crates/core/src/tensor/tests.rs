use rand::Rng;

use super::kernels::*;
use super::*;
use crate::rng::rng_from;

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Textbook cross-correlation over an explicitly zero-padded input.
fn conv2d_oracle(
    input: &[f64],
    [cin, h, w]: [usize; 3],
    kernel: &[f64],
    [cout, _, kh, kw]: [usize; 4],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; cin * hp * wp];
    for c in 0..cin {
        for y in 0..h {
            for x in 0..w {
                padded[(c * hp + y + pad) * wp + x + pad] = input[(c * h + y) * w + x];
            }
        }
    }
    let (ho, wo) = ((hp - kh) / stride + 1, (wp - kw) / stride + 1);
    let mut out = Vec::new();
    for co in 0..cout {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = bias[co];
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = y * stride + ky;
                            let ix = x * stride + kx;
                            let (iy_in, ix_in) = (iy as isize - pad as isize, ix as isize - pad as isize);
                            if iy_in < 0 || ix_in < 0 || iy_in >= h as isize || ix_in >= w as isize {
                                continue;
                            }
                            acc += kernel[((co * cin + ci) * kh + ky) * kw + kx] * padded[(ci * hp + iy) * wp + ix];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn conv3d_oracle(
    input: &[f64],
    [cin, d, h, w]: [usize; 4],
    kernel: &[f64],
    [cout, _, kd, kh, kw]: [usize; 5],
    bias: &[f64],
    pad: usize,
) -> Vec<f64> {
    let mut out = Vec::new();
    let (od, oh, ow) = (d + 2 * pad - kd + 1, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let at = |c: usize, z: isize, y: isize, x: isize| -> Option<f64> {
        (z >= 0 && y >= 0 && x >= 0 && (z as usize) < d && (y as usize) < h && (x as usize) < w)
            .then(|| input[((c * d + z as usize) * h + y as usize) * w + x as usize])
    };
    for co in 0..cout {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for a in 0..kd {
                            for b in 0..kh {
                                for c in 0..kw {
                                    let p = pad as isize;
                                    if let Some(v) = at(ci, (z + a) as isize - p, (y + b) as isize - p, (x + c) as isize - p) {
                                        acc += kernel[(((co * cin + ci) * kd + a) * kh + b) * kw + c] * v;
                                    }
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

fn deconv_oracle(input: &[f64], [cin, h, w]: [usize; 3], kernel: &[f64], [_, cout, kh, kw]: [usize; 4], s: usize) -> Vec<f64> {
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
                                out[(co * oh + oy) * ow + ox] +=
                                    input[(ci * h + y) * w + x] * kernel[((ci * cout + co) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn maxpool_oracle(input: &[f64], [c, h, w]: [usize; 3]) -> Vec<f64> {
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

/// Central finite differences against the graph's analytic gradient.
/// Returns the worst relative error over up to `samples` entries per leaf.
fn gradcheck(leaves: &[(Vec<usize>, Vec<f64>)], samples: usize, build: impl Fn(&mut Graph<f64>, &[Tensor]) -> Tensor) -> f64 {
    let eval = |vals: &[Vec<f64>]| -> f64 {
        let mut g = Graph::new();
        let ts: Vec<Tensor> = leaves
            .iter()
            .zip(vals)
            .map(|((s, _), v)| g.leaf_from(s, v.clone(), true).unwrap())
            .collect();
        let out = build(&mut g, &ts);
        g.value(out)[0]
    };
    let mut g = Graph::new();
    let ts: Vec<Tensor> = leaves.iter().map(|(s, v)| g.leaf_from(s, v.clone(), true).unwrap()).collect();
    let out = build(&mut g, &ts);
    g.backward(out).unwrap();
    let mut worst = 0.0f64;
    let mut rng = rng_from(99);
    let h = 1e-4;
    for (li, (_, v)) in leaves.iter().enumerate() {
        let analytic = g.grad(ts[li]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; v.len()]);
        let idx: Vec<usize> = if v.len() <= samples {
            (0..v.len()).collect()
        } else {
            (0..samples).map(|_| rng.random_range(0..v.len())).collect()
        };
        for i in idx {
            let mut vals: Vec<Vec<f64>> = leaves.iter().map(|(_, v)| v.clone()).collect();
            vals[li][i] += h;
            let up = eval(&vals);
            vals[li][i] -= 2.0 * h;
            let down = eval(&vals);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
    }
    worst
}

fn project(g: &mut Graph<f64>, t: Tensor, seed: u64) -> Tensor {
    let shape = g.shape(t).to_vec();
    let n = g.value(t).len();
    let r = g.leaf_from(&shape, random(n, seed), false).unwrap();
    let p = g.mul(t, r).unwrap();
    g.sum(p)
}

#[test]
fn conv2d_delta_and_bias_kernels() {
    let x = random(2 * 5 * 5, 1);
    let mut k = vec![0.0; 2 * 9];
    k[4] = 1.0;
    k[9 + 4] = 1.0;
    let mut g = Graph::new();
    let xi = g.leaf_from(&[2, 5, 5], x.clone(), false).unwrap();
    let ki = g.leaf_from(&[1, 2, 3, 3], k, false).unwrap();
    let b = g.leaf_from(&[1], vec![0.0], false).unwrap();
    let y = g.conv2d(xi, ki, b, 1, true).unwrap();
    for i in 0..25 {
        assert_eq!(g.value(y)[i], x[i] + x[25 + i]);
    }
    let kz = g.leaf_from(&[1, 2, 3, 3], vec![0.0; 18], false).unwrap();
    let b2 = g.leaf_from(&[1], vec![0.75], false).unwrap();
    let y2 = g.conv2d(xi, kz, b2, 1, true).unwrap();
    assert!(g.value(y2).iter().all(|&v| v == 0.75));
}

#[test]
fn conv2d_matches_loop_oracle_exactly() {
    for (cin, cout, h, w, k, stride, pad, seed) in [
        (1, 1, 4, 4, 2, 1, 0, 1),
        (4, 3, 8, 8, 3, 1, 1, 2),
        (3, 2, 7, 6, 3, 2, 1, 3),
        (2, 5, 8, 8, 1, 1, 0, 4),
        (4, 4, 8, 8, 5, 1, 2, 5),
    ] {
        let x = random(cin * h * w, seed);
        let kk = random(cout * cin * k * k, seed + 10);
        let b = random(cout, seed + 20);
        let geom = Conv2dGeom::new([cin, h, w], [cout, cin, k, k], stride, pad).unwrap();
        let got = conv2d_forward_with(Strategy::Direct, &geom, &x, &kk, &b);
        let want = conv2d_oracle(&x, [cin, h, w], &kk, [cout, cin, k, k], &b, stride, pad);
        assert_eq!(got, want);
        let fast = conv2d_forward_with(Strategy::Gemm, &geom, &x, &kk, &b);
        for (a, b) in fast.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_errors() {
    assert!(Conv2dGeom::new([2, 4, 4], [1, 3, 3, 3], 1, 1).is_err());
    assert!(Conv2dGeom::new([1, 2, 2], [1, 1, 3, 3], 1, 0).is_err());
    assert!(Conv2dGeom::new([1, 4, 4], [1, 1, 3, 3], 0, 0).is_err());
    let mut g = Graph::<f64>::new();
    let x = g.leaf_from(&[1, 4, 4], vec![0.0; 16], false).unwrap();
    let k = g.leaf_from(&[1, 1, 2, 2], vec![0.0; 4], false).unwrap();
    let b = g.leaf_from(&[1], vec![0.0], false).unwrap();
    assert!(g.conv2d(x, k, b, 1, true).is_err());
}

#[test]
fn conv3d_matches_loop_oracle_exactly() {
    for (cin, cout, d, k, pad, seed) in [(2, 1, 3, 3, 1, 1), (3, 2, 4, 3, 0, 2), (2, 2, 5, 1, 0, 3), (4, 2, 4, 3, 1, 4)] {
        let x = random(cin * d * d * d, seed);
        let kk = random(cout * cin * k * k * k, seed + 10);
        let b = random(cout, seed + 20);
        let geom = Conv3dGeom::new([cin, d, d, d], [cout, cin, k, k, k], [pad; 3]).unwrap();
        let want = conv3d_oracle(&x, [cin, d, d, d], &kk, [cout, cin, k, k, k], &b, pad);
        assert_eq!(conv3d_forward_with(Strategy::Direct, &geom, &x, &kk, &b), want);
        for (a, b) in conv3d_forward_with(Strategy::Gemm, &geom, &x, &kk, &b).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv3d_delta_and_scale() {
    let x = random(27, 5);
    let mut k = vec![0.0; 27];
    k[13] = 1.0;
    let mut g = Graph::new();
    let xi = g.leaf_from(&[1, 3, 3, 3], x.clone(), false).unwrap();
    let ki = g.leaf_from(&[1, 1, 3, 3, 3], k, false).unwrap();
    let b = g.leaf_from(&[1], vec![0.0], false).unwrap();
    let y = g.conv3d(xi, ki, b, true).unwrap();
    assert_eq!(g.value(y), &x[..]);
    let w = g.leaf_from(&[1, 1, 1, 1, 1], vec![-2.5], false).unwrap();
    let y2 = g.conv3d(xi, w, b, true).unwrap();
    for (a, b) in g.value(y2).iter().zip(&x) {
        assert_eq!(*a, -2.5 * b);
    }
}

#[test]
fn deconv2d_tiles_and_matches_oracles() {
    let mut g = Graph::new();
    let x = g.leaf_from(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
    let k = g.leaf_from(&[1, 1, 2, 2], vec![1.0; 4], false).unwrap();
    let y = g.deconv2d(x, k, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4]);
    assert_eq!(
        g.value(y),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
    assert!(g.deconv2d(x, k, 4).is_err());

    for (cin, cout, h, k, s, seed) in [(3, 2, 4, 2, 2, 1), (2, 3, 2, 4, 4, 2), (2, 2, 3, 3, 2, 3), (4, 1, 8, 2, 2, 4)] {
        let xv = random(cin * h * h, seed);
        let kv = random(cin * cout * k * k, seed + 5);
        let geom = Deconv2dGeom::new([cin, h, h], [cin, cout, k, k], s).unwrap();
        let want = deconv_oracle(&xv, [cin, h, h], &kv, [cin, cout, k, k], s);
        let got = deconv2d_forward_with(Strategy::Direct, &geom, &xv, &kv);
        assert_eq!(got, want);
        assert_eq!(got.len(), cout * h * s * h * s);
        for (a, b) in deconv2d_forward_with(Strategy::Gemm, &geom, &xv, &kv).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        if k == s {
            // Transposed convolution is the input-gradient of a strided
            // convolution with the same kernel array.
            let mut g = Graph::new();
            let z = g.leaf_from(&[cout, h * s, h * s], vec![0.0; cout * h * s * h * s], true).unwrap();
            let kk = g.leaf_from(&[cin, cout, k, k], kv.clone(), false).unwrap();
            let b = g.leaf_from(&[cin], vec![0.0; cin], false).unwrap();
            let c = g.conv2d(z, kk, b, s, false).unwrap();
            g.backward_from(c, xv.clone()).unwrap();
            for (a, b) in g.grad(z).unwrap().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn maxpool_values_ties_and_oracle() {
    let mut g = Graph::new();
    let x = g.leaf_from(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
    let y = g.maxpool2d(x).unwrap();
    assert_eq!(g.value(y), &[4.0]);

    let c = g.leaf_from(&[1, 4, 4], vec![5.0; 16], true).unwrap();
    let y = g.maxpool2d(c).unwrap();
    assert!(g.value(y).iter().all(|&v| v == 5.0));
    let s = g.sum(y);
    g.backward(s).unwrap();
    let grad = g.grad(c).unwrap();
    let firsts = [0, 2, 8, 10];
    for (i, &v) in grad.iter().enumerate() {
        assert_eq!(v, if firsts.contains(&i) { 1.0 } else { 0.0 });
    }

    let xv = random(4 * 8 * 8, 7);
    let (out, _) = maxpool2d_forward(&xv, [4, 8, 8]).unwrap();
    assert_eq!(out, maxpool_oracle(&xv, [4, 8, 8]));
    assert!(maxpool2d_forward(&xv[..4 * 7 * 8], [4, 7, 8]).is_err());
}

#[test]
fn relu_and_dropout() {
    let mut g = Graph::new();
    let x = g.leaf_from(&[3], vec![-1.0, 0.0, 2.0], false).unwrap();
    let r = g.relu(x);
    assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);

    let mut rng = rng_from(3);
    let same = g.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(g.value(same), g.value(x));
    let inference = g.dropout(x, 0.85, false, &mut rng).unwrap();
    assert_eq!(g.value(inference), g.value(x));
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(g.dropout(x, -0.1, true, &mut rng).is_err());

    let n = 100_000;
    let ones = g.leaf_from(&[n], vec![1.0; n], false).unwrap();
    let d1 = g.dropout(ones, 0.5, true, &mut rng_from(11)).unwrap();
    let mean: f64 = g.value(d1).iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    assert!(g.value(d1).iter().all(|&v| v == 0.0 || v == 2.0));
    let d2 = g.dropout(ones, 0.5, true, &mut rng_from(11)).unwrap();
    assert_eq!(g.value(d1), g.value(d2));
}

#[test]
fn softmax_ce_cases() {
    let mut g = Graph::new();
    let l = g.leaf_from(&[2, 3], vec![0.3, -1.0, 2.0, 0.3, -1.0, 2.0], false).unwrap();
    let loss = g.softmax_ce(l, &[0, 1, 1]).unwrap();
    assert!((g.value(loss)[0] - std::f64::consts::LN_2).abs() < 1e-15);

    let sat = g.leaf_from(&[2, 1], vec![20.0, -20.0], false).unwrap();
    let loss = g.softmax_ce(sat, &[0]).unwrap();
    assert!(g.value(loss)[0] < 1e-15);

    let n = 50;
    let lv = random(2 * n, 4).iter().map(|v| 5.0 * v).collect::<Vec<_>>();
    let target: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let lt = g.leaf_from(&[2, 5, 10], lv.clone(), false).unwrap();
    let loss = g.softmax_ce(lt, &target).unwrap();
    let mut oracle = 0.0;
    for v in 0..n {
        let (a, b) = (lv[v], lv[n + v]);
        let p = [a.exp() / (a.exp() + b.exp()), b.exp() / (a.exp() + b.exp())];
        oracle -= p[target[v] as usize].ln();
    }
    oracle /= n as f64;
    assert!((g.value(loss)[0] - oracle).abs() < 1e-10);
    let probs = g.softmax_probs(loss).unwrap();
    for v in 0..n {
        let s = probs[v] + probs[n + v];
        assert!((s - 1.0).abs() < 1e-6 && probs[v] >= 0.0 && probs[v] <= 1.0);
    }
    assert!(g.softmax_ce(lt, &vec![2; n]).is_err());
    let three = g.leaf_from(&[3, 2], vec![0.0; 6], false).unwrap();
    assert!(g.softmax_ce(three, &[0, 1]).is_err());
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let xv = random(6, 8);
    let x = g.leaf_from(&[2, 3], xv.clone(), true).unwrap();
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::new();
    let x = g.leaf_from(&[2, 3], xv.clone(), true).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    for (gr, v) in g.grad(x).unwrap().iter().zip(&xv) {
        assert_eq!(*gr, 2.0 * v);
    }
    assert!(g.backward(sq).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let tol = 1e-4;
    let x = random(3 * 8 * 8, 1);
    let k = random(4 * 3 * 9, 2);
    let b = random(4, 3);
    let err = gradcheck(&[(vec![3, 8, 8], x.clone()), (vec![4, 3, 3, 3], k), (vec![4], b.clone())], 60, |g, t| {
        let y = g.conv2d(t[0], t[1], t[2], 1, true).unwrap();
        project(g, y, 50)
    });
    assert!(err < tol, "conv2d {err}");

    let k2 = random(4 * 3 * 9, 4);
    let err = gradcheck(&[(vec![3, 8, 8], x.clone()), (vec![4, 3, 3, 3], k2), (vec![4], b)], 60, |g, t| {
        let y = g.conv2d(t[0], t[1], t[2], 2, true).unwrap();
        project(g, y, 51)
    });
    assert!(err < tol, "strided conv2d {err}");

    let x3 = random(2 * 4 * 4 * 4, 5);
    let k3 = random(3 * 2 * 27, 6);
    let b3 = random(3, 7);
    let err = gradcheck(&[(vec![2, 4, 4, 4], x3), (vec![3, 2, 3, 3, 3], k3), (vec![3], b3)], 60, |g, t| {
        let y = g.conv3d(t[0], t[1], t[2], true).unwrap();
        project(g, y, 52)
    });
    assert!(err < tol, "conv3d {err}");

    let xd = random(3 * 4 * 4, 8);
    for (k, s) in [(2, 2), (4, 4), (3, 2)] {
        let kd = random(3 * 2 * k * k, 9 + k as u64);
        let err = gradcheck(&[(vec![3, 4, 4], xd.clone()), (vec![3, 2, k, k], kd)], 60, |g, t| {
            let y = g.deconv2d(t[0], t[1], s).unwrap();
            project(g, y, 53)
        });
        assert!(err < tol, "deconv2d k{k} s{s} {err}");
    }

    let err = gradcheck(&[(vec![3, 8, 8], x.clone())], 60, |g, t| {
        let y = g.maxpool2d(t[0]).unwrap();
        project(g, y, 54)
    });
    assert!(err < tol, "maxpool {err}");

    let err = gradcheck(&[(vec![3, 8, 8], x.clone())], 60, |g, t| {
        let y = g.relu(t[0]);
        project(g, y, 55)
    });
    assert!(err < tol, "relu {err}");

    let err = gradcheck(&[(vec![3, 8, 8], x.clone())], 60, |g, t| {
        let y = g.dropout(t[0], 0.3, true, &mut rng_from(4)).unwrap();
        project(g, y, 56)
    });
    assert!(err < tol, "dropout {err}");

    let y = random(3 * 8 * 8, 12);
    let err = gradcheck(&[(vec![3, 8, 8], x.clone()), (vec![3, 8, 8], y)], 60, |g, t| {
        let s = g.add(t[0], t[1]).unwrap();
        let p = g.mul(s, t[0]).unwrap();
        project(g, p, 57)
    });
    assert!(err < tol, "add/mul {err}");

    let logits = random(2 * 6 * 6, 13).iter().map(|v| 3.0 * v).collect();
    let target: Vec<u8> = (0..36).map(|i| (i % 4 == 1) as u8).collect();
    let err = gradcheck(&[(vec![2, 6, 6], logits)], 72, |g, t| g.softmax_ce(t[0], &target).unwrap());
    assert!(err < tol, "softmax_ce {err}");
}

#[test]
fn f32_gemm_path_tracks_f64_oracle() {
    let x = random(4 * 12 * 12, 21);
    let k = random(6 * 4 * 9, 22);
    let b = random(6, 23);
    let geom = Conv2dGeom::new([4, 12, 12], [6, 4, 3, 3], 1, 1).unwrap();
    let want = conv2d_forward_with(Strategy::Direct, &geom, &x, &k, &b);
    let f = |v: &[f64]| v.iter().map(|&a| a as f32).collect::<Vec<f32>>();
    let got = conv2d_forward(&geom, &f(&x), &f(&k), &f(&b));
    for (a, b) in got.iter().zip(&want) {
        assert!((f64::from(*a) - b).abs() < 1e-4);
    }
    let dout = random(6 * 144, 24);
    let gd = conv2d_backward_with(Strategy::Direct, &geom, &x, &k, &dout);
    let gg = conv2d_backward_with(Strategy::Gemm, &geom, &x, &k, &dout);
    for (a, b) in gd.input.iter().zip(&gg.input).chain(gd.kernel.iter().zip(&gg.kernel)) {
        assert!((a - b).abs() < 1e-10);
    }

    let g3 = Conv3dGeom::new([3, 5, 5, 5], [2, 3, 3, 3, 3], [1; 3]).unwrap();
    let x3 = random(3 * 125, 25);
    let k3 = random(2 * 3 * 27, 26);
    let d3 = random(2 * 125, 27);
    let a = conv3d_backward_with(Strategy::Direct, &g3, &x3, &k3, &d3);
    let b = conv3d_backward_with(Strategy::Gemm, &g3, &x3, &k3, &d3);
    for (p, q) in a.input.iter().zip(&b.input).chain(a.kernel.iter().zip(&b.kernel)).chain(a.bias.iter().zip(&b.bias)) {
        assert!((p - q).abs() < 1e-10);
    }

    let gd = Deconv2dGeom::new([3, 4, 4], [3, 2, 3, 3], 2).unwrap();
    let xd = random(48, 28);
    let kd = random(54, 29);
    let dd = random(2 * 64, 30);
    let a = deconv2d_backward_with(Strategy::Direct, &gd, &xd, &kd, &dd);
    let b = deconv2d_backward_with(Strategy::Gemm, &gd, &xd, &kd, &dd);
    for (p, q) in a.input.iter().zip(&b.input).chain(a.kernel.iter().zip(&b.kernel)) {
        assert!((p - q).abs() < 1e-10);
    }
}
