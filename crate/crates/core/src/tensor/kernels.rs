//! Forward and backward kernels for the convolution family and pooling.
//!
//! Every kernel has a direct loop form and, where it matters for speed, an
//! im2col + GEMM form. The scalar type picks the default (`Real::STRATEGY`);
//! the `*_with` entry points take it explicitly so the two forms can be
//! checked against each other.

use crate::error::{Error, Result};

use super::real::{Real, Strategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Conv2dGeom {
    pub fn new(input: [usize; 3], kernel: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [cin, h, w] = input;
        let [cout, kcin, kh, kw] = kernel;
        if kcin != cin {
            return Err(Error::Shape(format!("conv2d kernel expects {kcin} input channels, got {cin}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(Self {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `x` for which `x*stride + kx - pad` lands inside the
    /// input (stride 1 only).
    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo);
        (lo, hi.max(lo))
    }

    #[inline]
    fn in_coord(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

pub fn conv2d_forward<T: Real>(g: &Conv2dGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    conv2d_forward_with(T::STRATEGY, g, input, kernel, bias)
}

pub fn conv2d_forward_with<T: Real>(
    strategy: Strategy,
    g: &Conv2dGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.cout * plane];
    for (co, o) in out.chunks_exact_mut(plane).enumerate() {
        o.fill(bias[co]);
    }
    match strategy {
        Strategy::Direct => conv2d_fwd_direct(g, input, kernel, &mut out),
        Strategy::Gemm => {
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                input
            } else {
                owned = im2col(g, input);
                &owned
            };
            let k = g.k();
            T::gemm(g.cout, k, plane, kernel, (k as isize, 1), cols, (plane as isize, 1), &mut out, (plane as isize, 1), true);
        }
    }
    out
}

fn conv2d_fwd_direct<T: Real>(g: &Conv2dGeom, input: &[T], kernel: &[T], out: &mut [T]) {
    let plane = g.ho * g.wo;
    for co in 0..g.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = kernel[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    for y in 0..g.ho {
                        let Some(iy) = g.in_coord(y, ky, g.h) else { continue };
                        let irow = &input[(ci * g.h + iy) * g.w..][..g.w];
                        let orow = &mut o[y * g.wo..][..g.wo];
                        if g.stride == 1 {
                            let (x0, x1) = g.x_range(kx);
                            let shift = kx as isize - g.pad as isize;
                            let src = &irow[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize];
                            for (ov, &iv) in orow[x0..x1].iter_mut().zip(src) {
                                *ov += wv * iv;
                            }
                        } else {
                            for (x, ov) in orow.iter_mut().enumerate() {
                                if let Some(ix) = g.in_coord(x, kx, g.w) {
                                    *ov += wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(g: &Conv2dGeom, input: &[T]) -> Vec<T> {
    let plane = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.k() * plane];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..g.ho {
                    let Some(iy) = g.in_coord(y, ky, g.h) else { continue };
                    let irow = &input[(ci * g.h + iy) * g.w..][..g.w];
                    let drow = &mut dst[y * g.wo..][..g.wo];
                    if g.stride == 1 {
                        let (x0, x1) = g.x_range(kx);
                        let shift = kx as isize - g.pad as isize;
                        drow[x0..x1].copy_from_slice(
                            &irow[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize],
                        );
                    } else {
                        for (x, d) in drow.iter_mut().enumerate() {
                            if let Some(ix) = g.in_coord(x, kx, g.w) {
                                *d = irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(g: &Conv2dGeom, cols: &[T], din: &mut [T]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..g.ho {
                    let Some(iy) = g.in_coord(y, ky, g.h) else { continue };
                    let drow = &mut din[(ci * g.h + iy) * g.w..][..g.w];
                    let srow = &src[y * g.wo..][..g.wo];
                    for (x, &v) in srow.iter().enumerate() {
                        if let Some(ix) = g.in_coord(x, kx, g.w) {
                            drow[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a 2D convolution.
pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(g: &Conv2dGeom, input: &[T], kernel: &[T], dout: &[T]) -> ConvGrads<T> {
    conv2d_backward_with(T::STRATEGY, g, input, kernel, dout)
}

pub fn conv2d_backward_with<T: Real>(
    strategy: Strategy,
    g: &Conv2dGeom,
    input: &[T],
    kernel: &[T],
    dout: &[T],
) -> ConvGrads<T> {
    let plane = g.ho * g.wo;
    let bias = dout.chunks_exact(plane).map(|c| c.iter().copied().sum()).collect();
    let mut din = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    match strategy {
        Strategy::Direct => {
            for co in 0..g.cout {
                let d = &dout[co * plane..(co + 1) * plane];
                for ci in 0..g.cin {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let wi = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                            let wv = kernel[wi];
                            let mut acc = T::zero();
                            for y in 0..g.ho {
                                let Some(iy) = g.in_coord(y, ky, g.h) else { continue };
                                let base = (ci * g.h + iy) * g.w;
                                for x in 0..g.wo {
                                    if let Some(ix) = g.in_coord(x, kx, g.w) {
                                        let dv = d[y * g.wo + x];
                                        acc += dv * input[base + ix];
                                        din[base + ix] += wv * dv;
                                    }
                                }
                            }
                            dk[wi] = acc;
                        }
                    }
                }
            }
        }
        Strategy::Gemm => {
            let k = g.k();
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                input
            } else {
                owned = im2col(g, input);
                &owned
            };
            // dK = dOut · colsᵀ
            T::gemm(g.cout, plane, k, dout, (plane as isize, 1), cols, (1, plane as isize), &mut dk, (k as isize, 1), false);
            if g.is_pointwise() {
                T::gemm(g.cin, g.cout, plane, kernel, (1, k as isize), dout, (plane as isize, 1), &mut din, (plane as isize, 1), false);
            } else {
                let mut dcols = vec![T::zero(); k * plane];
                T::gemm(k, g.cout, plane, kernel, (1, k as isize), dout, (plane as isize, 1), &mut dcols, (plane as isize, 1), false);
                col2im_add(g, &dcols, &mut din);
            }
        }
    }
    ConvGrads { input: din, kernel: dk, bias }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub cin: usize,
    pub dims: [usize; 3],
    pub cout: usize,
    pub k: [usize; 3],
    pub pad: [usize; 3],
    pub out: [usize; 3],
}

impl Conv3dGeom {
    /// `input` is `[cin, d, h, w]`, `kernel` `[cout, cin, kd, kh, kw]`; stride 1.
    pub fn new(input: [usize; 4], kernel: [usize; 5], pad: [usize; 3]) -> Result<Self> {
        let [cin, d, h, w] = input;
        let [cout, kcin, kd, kh, kw] = kernel;
        if kcin != cin {
            return Err(Error::Shape(format!("conv3d kernel expects {kcin} input channels, got {cin}")));
        }
        let dims = [d, h, w];
        let k = [kd, kh, kw];
        for a in 0..3 {
            if k[a] == 0 || k[a] > dims[a] + 2 * pad[a] {
                return Err(Error::Shape(format!("conv3d kernel {k:?} does not fit input {dims:?} with pad {pad:?}")));
            }
        }
        let out = [0, 1, 2].map(|a| dims[a] + 2 * pad[a] - k[a] + 1);
        Ok(Self { cin, dims, cout, k, pad, out })
    }

    fn kvol(&self) -> usize {
        self.cin * self.k[0] * self.k[1] * self.k[2]
    }

    #[inline]
    fn in_coord(&self, a: usize, o: usize, k: usize) -> Option<usize> {
        let i = (o + k) as isize - self.pad[a] as isize;
        (i >= 0 && (i as usize) < self.dims[a]).then_some(i as usize)
    }

    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad[2].saturating_sub(kx);
        let hi = (self.dims[2] + self.pad[2]).saturating_sub(kx).min(self.out[2]);
        (lo, hi.max(lo))
    }

    /// im2col for one output depth plane: `[kvol, ho*wo]`.
    fn plane_cols<T: Real>(&self, input: &[T], oz: usize, cols: &mut [T]) {
        let [d, h, w] = self.dims;
        let [_, ho, wo] = self.out;
        let plane = ho * wo;
        cols.fill(T::zero());
        for ci in 0..self.cin {
            for kz in 0..self.k[0] {
                let iz = self.in_coord(0, oz, kz);
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let row = ((ci * self.k[0] + kz) * self.k[1] + ky) * self.k[2] + kx;
                        let Some(iz) = iz else { continue };
                        let dst = &mut cols[row * plane..(row + 1) * plane];
                        let (x0, x1) = self.x_range(kx);
                        let shift = kx as isize - self.pad[2] as isize;
                        for y in 0..ho {
                            let Some(iy) = self.in_coord(1, y, ky) else { continue };
                            let irow = &input[((ci * d + iz) * h + iy) * w..][..w];
                            dst[y * wo + x0..y * wo + x1].copy_from_slice(
                                &irow[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize],
                            );
                        }
                    }
                }
            }
        }
    }

    fn plane_col2im_add<T: Real>(&self, cols: &[T], oz: usize, din: &mut [T]) {
        let [d, h, w] = self.dims;
        let [_, ho, wo] = self.out;
        let plane = ho * wo;
        for ci in 0..self.cin {
            for kz in 0..self.k[0] {
                let Some(iz) = self.in_coord(0, oz, kz) else { continue };
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let row = ((ci * self.k[0] + kz) * self.k[1] + ky) * self.k[2] + kx;
                        let src = &cols[row * plane..(row + 1) * plane];
                        let (x0, x1) = self.x_range(kx);
                        let shift = kx as isize - self.pad[2] as isize;
                        for y in 0..ho {
                            let Some(iy) = self.in_coord(1, y, ky) else { continue };
                            let drow = &mut din[((ci * d + iz) * h + iy) * w..][..w];
                            let s = &src[y * wo + x0..y * wo + x1];
                            let dst = &mut drow[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize];
                            for (dv, &v) in dst.iter_mut().zip(s) {
                                *dv += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Real>(g: &Conv3dGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    conv3d_forward_with(T::STRATEGY, g, input, kernel, bias)
}

pub fn conv3d_forward_with<T: Real>(
    strategy: Strategy,
    g: &Conv3dGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let vol = od * oh * ow;
    let mut out = vec![T::zero(); g.cout * vol];
    for (co, o) in out.chunks_exact_mut(vol).enumerate() {
        o.fill(bias[co]);
    }
    let [kd, kh, kw] = g.k;
    match strategy {
        Strategy::Direct => {
            for co in 0..g.cout {
                let o = &mut out[co * vol..(co + 1) * vol];
                for ci in 0..g.cin {
                    for kz in 0..kd {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = kernel[(((co * g.cin + ci) * kd + kz) * kh + ky) * kw + kx];
                                let (x0, x1) = g.x_range(kx);
                                let shift = kx as isize - g.pad[2] as isize;
                                for z in 0..od {
                                    let Some(iz) = g.in_coord(0, z, kz) else { continue };
                                    for y in 0..oh {
                                        let Some(iy) = g.in_coord(1, y, ky) else { continue };
                                        let irow = &input[((ci * d + iz) * h + iy) * w..][..w];
                                        let orow = &mut o[(z * oh + y) * ow..][..ow];
                                        let src = &irow[(x0 as isize + shift) as usize..(x1 as isize + shift) as usize];
                                        for (ov, &iv) in orow[x0..x1].iter_mut().zip(src) {
                                            *ov += wv * iv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Strategy::Gemm => {
            let k = g.kvol();
            let plane = oh * ow;
            let mut cols = vec![T::zero(); k * plane];
            for z in 0..od {
                g.plane_cols(input, z, &mut cols);
                T::gemm(
                    g.cout,
                    k,
                    plane,
                    kernel,
                    (k as isize, 1),
                    &cols,
                    (plane as isize, 1),
                    &mut out[z * plane..],
                    (vol as isize, 1),
                    true,
                );
            }
        }
    }
    out
}

pub fn conv3d_backward<T: Real>(g: &Conv3dGeom, input: &[T], kernel: &[T], dout: &[T]) -> ConvGrads<T> {
    conv3d_backward_with(T::STRATEGY, g, input, kernel, dout)
}

pub fn conv3d_backward_with<T: Real>(
    strategy: Strategy,
    g: &Conv3dGeom,
    input: &[T],
    kernel: &[T],
    dout: &[T],
) -> ConvGrads<T> {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let vol = od * oh * ow;
    let bias = dout.chunks_exact(vol).map(|c| c.iter().copied().sum()).collect();
    let mut din = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let [kd, kh, kw] = g.k;
    match strategy {
        Strategy::Direct => {
            for co in 0..g.cout {
                let dco = &dout[co * vol..(co + 1) * vol];
                for ci in 0..g.cin {
                    for kz in 0..kd {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wi = (((co * g.cin + ci) * kd + kz) * kh + ky) * kw + kx;
                                let wv = kernel[wi];
                                let (x0, x1) = g.x_range(kx);
                                let shift = kx as isize - g.pad[2] as isize;
                                let mut acc = T::zero();
                                for z in 0..od {
                                    let Some(iz) = g.in_coord(0, z, kz) else { continue };
                                    for y in 0..oh {
                                        let Some(iy) = g.in_coord(1, y, ky) else { continue };
                                        let base = ((ci * d + iz) * h + iy) * w;
                                        for x in x0..x1 {
                                            let ix = (x as isize + shift) as usize;
                                            let dv = dco[(z * oh + y) * ow + x];
                                            acc += dv * input[base + ix];
                                            din[base + ix] += wv * dv;
                                        }
                                    }
                                }
                                dk[wi] = acc;
                            }
                        }
                    }
                }
            }
        }
        Strategy::Gemm => {
            let k = g.kvol();
            let plane = oh * ow;
            let mut cols = vec![T::zero(); k * plane];
            let mut dcols = vec![T::zero(); k * plane];
            for z in 0..od {
                g.plane_cols(input, z, &mut cols);
                let dplane = &dout[z * plane..];
                T::gemm(g.cout, plane, k, dplane, (vol as isize, 1), &cols, (1, plane as isize), &mut dk, (k as isize, 1), true);
                T::gemm(k, g.cout, plane, kernel, (1, k as isize), dplane, (vol as isize, 1), &mut dcols, (plane as isize, 1), false);
                g.plane_col2im_add(&dcols, z, &mut din);
            }
        }
    }
    ConvGrads { input: din, kernel: dk, bias }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deconv2dGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl Deconv2dGeom {
    /// `input` `[cin, h, w]`, `kernel` `[cin, cout, kh, kw]`; output is
    /// `[cout, h*stride, w*stride]` (contributions past the edge are cropped).
    pub fn new(input: [usize; 3], kernel: [usize; 4], stride: usize) -> Result<Self> {
        let [cin, h, w] = input;
        let [kcin, cout, kh, kw] = kernel;
        if kcin != cin {
            return Err(Error::Shape(format!("deconv2d kernel expects {kcin} input channels, got {cin}")));
        }
        if stride == 0 || kh < stride || kw < stride {
            return Err(Error::InvalidArgument(format!(
                "deconv2d needs kernel >= stride >= 1, got kernel {kh}x{kw}, stride {stride}"
            )));
        }
        Ok(Self { cin, h, w, cout, kh, kw, stride })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.h * self.stride, self.w * self.stride)
    }

    fn ckk(&self) -> usize {
        self.cout * self.kh * self.kw
    }
}

pub fn deconv2d_forward<T: Real>(g: &Deconv2dGeom, input: &[T], kernel: &[T]) -> Vec<T> {
    deconv2d_forward_with(T::STRATEGY, g, input, kernel)
}

pub fn deconv2d_forward_with<T: Real>(strategy: Strategy, g: &Deconv2dGeom, input: &[T], kernel: &[T]) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let s = g.stride;
    let mut out = vec![T::zero(); g.cout * oh * ow];
    match strategy {
        Strategy::Direct => {
            for ci in 0..g.cin {
                for y in 0..g.h {
                    for x in 0..g.w {
                        let v = input[(ci * g.h + y) * g.w + x];
                        for co in 0..g.cout {
                            for ky in 0..g.kh {
                                let oy = y * s + ky;
                                if oy >= oh {
                                    continue;
                                }
                                for kx in 0..g.kw {
                                    let ox = x * s + kx;
                                    if ox < ow {
                                        out[(co * oh + oy) * ow + ox] +=
                                            v * kernel[((ci * g.cout + co) * g.kh + ky) * g.kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Strategy::Gemm => {
            let hw = g.h * g.w;
            let ckk = g.ckk();
            let mut cols = vec![T::zero(); ckk * hw];
            T::gemm(ckk, g.cin, hw, kernel, (1, ckk as isize), input, (hw as isize, 1), &mut cols, (hw as isize, 1), false);
            for co in 0..g.cout {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let row = &cols[((co * g.kh + ky) * g.kw + kx) * hw..][..hw];
                        for y in 0..g.h {
                            let oy = y * s + ky;
                            if oy >= oh {
                                continue;
                            }
                            let orow = &mut out[(co * oh + oy) * ow..][..ow];
                            for x in 0..g.w {
                                let ox = x * s + kx;
                                if ox < ow {
                                    orow[ox] += row[y * g.w + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a transposed convolution (no bias).
pub struct DeconvGrads<T> {
    pub input: Vec<T>,
    pub kernel: Vec<T>,
}

pub fn deconv2d_backward<T: Real>(g: &Deconv2dGeom, input: &[T], kernel: &[T], dout: &[T]) -> DeconvGrads<T> {
    deconv2d_backward_with(T::STRATEGY, g, input, kernel, dout)
}

pub fn deconv2d_backward_with<T: Real>(
    strategy: Strategy,
    g: &Deconv2dGeom,
    input: &[T],
    kernel: &[T],
    dout: &[T],
) -> DeconvGrads<T> {
    let (oh, ow) = g.out_hw();
    let s = g.stride;
    let hw = g.h * g.w;
    let ckk = g.ckk();
    // Gather the output gradient seen by every (co, ky, kx, y, x) tap.
    let mut dcols = vec![T::zero(); ckk * hw];
    for co in 0..g.cout {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut dcols[((co * g.kh + ky) * g.kw + kx) * hw..][..hw];
                for y in 0..g.h {
                    let oy = y * s + ky;
                    if oy >= oh {
                        continue;
                    }
                    for x in 0..g.w {
                        let ox = x * s + kx;
                        if ox < ow {
                            row[y * g.w + x] = dout[(co * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        }
    }
    let mut din = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    match strategy {
        Strategy::Direct => {
            for ci in 0..g.cin {
                for r in 0..ckk {
                    let wv = kernel[ci * ckk + r];
                    let drow = &dcols[r * hw..(r + 1) * hw];
                    let irow = &input[ci * hw..(ci + 1) * hw];
                    let mut acc = T::zero();
                    for p in 0..hw {
                        din[ci * hw + p] += wv * drow[p];
                        acc += irow[p] * drow[p];
                    }
                    dk[ci * ckk + r] = acc;
                }
            }
        }
        Strategy::Gemm => {
            T::gemm(g.cin, ckk, hw, kernel, (ckk as isize, 1), &dcols, (hw as isize, 1), &mut din, (hw as isize, 1), false);
            T::gemm(g.cin, hw, ckk, input, (hw as isize, 1), &dcols, (1, hw as isize), &mut dk, (ckk as isize, 1), false);
        }
    }
    DeconvGrads { input: din, kernel: dk }
}

/// 2x2/stride-2 max pooling over `[c, h, w]`; returns values and the flat
/// input index of each maximum (first in row-major window order on ties).
pub fn maxpool2d_forward<T: Real>(input: &[T], [c, h, w]: [usize; 3]) -> Result<(Vec<T>, Vec<usize>)> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2d needs even spatial dims, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let base = (ch * h + 2 * y) * w + 2 * x;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward<T: Real>(argmax: &[usize], dout: &[T], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dout) {
        din[i] += g;
    }
    din
}
