//! Minimal CPU tensor core: the layers the conditional GAN needs, each with
//! a hand-written backward pass.
//!
//! Activations are stored channel-major as (C, N, H, W) so a convolution is
//! one gemm over the whole batch and batch-norm statistics are contiguous
//! slices.

mod conv;
mod layers;

pub use conv::{col2im, im2col, Conv2d, ConvGeometry, ConvTranspose2d};
pub use layers::{
    dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, tanh_backward, BatchNorm,
    BatchNormTape, Dense, Embedding,
};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::RngCore;

/// Floating-point element type of a network (f32 for training, f64 for
/// gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const BYTES: usize;

    /// `c = alpha * a · b + beta * c` on row-major storage with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn to_le(self, out: &mut Vec<u8>);
    fn from_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(last >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                assert!(c.len() >= m * n, "gemm output too small");
                // SAFETY: operand extents were checked against the slices above,
                // and c is a dense m x n row-major block.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }

            fn to_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn from_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Matrix operand: row-major storage of `rows x cols`, optionally read transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`).
pub fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, c: &mut [T], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimensions");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(m, k, n, T::one(), a.data, rsa, csa, b.data, rsb, csb, beta, &mut c[..m * n]);
}

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Real> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            grad: vec![T::zero(); value.len()],
            value,
            shape: shape.to_vec(),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Activation tensor stored as (C, N, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn from_data(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor data length");
        Tensor { c, n, h, w, data }
    }

    /// Spatial size of one sample-channel plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    /// From per-sample rows `[n][c*h*w]` (the layout of a dense layer output).
    pub fn from_rows(rows: &[T], c: usize, n: usize, h: usize, w: usize) -> Self {
        let plane = h * w;
        let mut data = vec![T::zero(); c * n * plane];
        for s in 0..n {
            for ch in 0..c {
                let src = &rows[(s * c + ch) * plane..][..plane];
                data[(ch * n + s) * plane..][..plane].copy_from_slice(src);
            }
        }
        Tensor { c, n, h, w, data }
    }

    /// Inverse of [`Tensor::from_rows`].
    pub fn to_rows(&self) -> Vec<T> {
        let plane = self.plane();
        let mut rows = vec![T::zero(); self.data.len()];
        for s in 0..self.n {
            for ch in 0..self.c {
                let src = &self.data[(ch * self.n + s) * plane..][..plane];
                rows[(s * self.c + ch) * plane..][..plane].copy_from_slice(src);
            }
        }
        rows
    }

    /// Appends the channels of `other` after those of `self`.
    pub fn concat_channels(mut self, other: &Tensor<T>) -> Self {
        assert_eq!((self.n, self.h, self.w), (other.n, other.h, other.w), "concat shape");
        self.data.extend_from_slice(&other.data);
        self.c += other.c;
        self
    }

    /// Splits off the trailing `count` channels.
    pub fn split_channels(mut self, count: usize) -> (Self, Self) {
        let keep = self.c - count;
        let tail = self.data.split_off(keep * self.n * self.plane());
        let other = Tensor::from_data(count, self.n, self.h, self.w, tail);
        self.c = keep;
        (self, other)
    }
}

/// Forward-pass mode. Training draws dropout masks from the given generator
/// and normalises with batch statistics.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub(crate) fn normal_vec<T: Real>(rng: &mut dyn RngCore, len: usize, std: f64) -> Vec<T> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    (0..len)
        .map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}
