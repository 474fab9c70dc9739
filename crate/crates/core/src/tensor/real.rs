use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// How convolution-like kernels are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Plain nested loops; accumulation order `bias, (ci, ky, kx)` matches a
    /// textbook loop implementation bit for bit.
    Direct,
    /// im2col lowering onto a blocked matrix product.
    Gemm,
}

/// Scalar type of the tensor engine. `f64` is the exact oracle mode,
/// `f32` the training mode.
pub trait Real:
    Float
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const STRATEGY: Strategy;

    fn of_f32(v: f32) -> Self;
    fn of_f64(v: f64) -> Self;
    fn as_f32(self) -> f32;
    fn as_f64(self) -> f64;

    /// `c = a · b + (accumulate ? c : 0)` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        c_strides: (isize, isize),
        accumulate: bool,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(rs >= 0 && cs >= 0, "{what}: negative strides");
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "{what}: matrix {rows}x{cols} exceeds buffer of {len}");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $strategy:expr) => {
        impl Real for $t {
            const STRATEGY: Strategy = $strategy;

            #[inline]
            fn of_f32(v: f32) -> Self {
                v as $t
            }
            #[inline]
            fn of_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f32(self) -> f32 {
                self as f32
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                c_strides: (isize, isize),
                accumulate: bool,
            ) {
                check_extent(a.len(), m, k, a_strides, "gemm lhs");
                check_extent(b.len(), k, n, b_strides, "gemm rhs");
                check_extent(c.len(), m, n, c_strides, "gemm out");
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: extents checked above; `c` is exclusively borrowed
                // and does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, Strategy::Gemm);
impl_real!(f64, matrixmultiply::dgemm, Strategy::Direct);
