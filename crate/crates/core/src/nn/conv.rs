use rand::RngCore;

use super::{gemm, normal_vec, Mat, Param, Real, Tensor};

/// Patch layout shared by convolution (image = input, grid = output) and
/// transposed convolution (image = output, grid = input).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ConvGeometry {
    /// Output size of a strided convolution: `(len + 2 pad - k) / stride + 1`.
    pub fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (len + 2 * pad - kernel) / stride + 1
    }

    /// Output size of a transposed convolution: `(len - 1) stride - 2 pad + k`.
    pub fn transpose_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (len - 1) * stride + kernel - 2 * pad
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Valid grid range along one axis for kernel offset `k`.
    #[inline]
    fn valid(&self, grid: usize, image: usize, k: usize) -> (usize, usize) {
        // image index = g * stride + k - pad must lie in [0, image)
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(self.stride) };
        let hi = if image + self.pad > k {
            (image + self.pad - k).div_ceil(self.stride).min(grid)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds (C, N, H, W) image patches into a `(C k k) x (N Gh Gw)` matrix.
pub fn im2col<T: Real>(g: &ConvGeometry, image: &[T], n: usize) -> Vec<T> {
    let (ih, iw, gh, gw) = (g.image_h, g.image_w, g.grid_h, g.grid_w);
    let cols_per_row = n * gh * gw;
    let mut cols = vec![T::zero(); g.rows() * cols_per_row];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            let (ylo, yhi) = g.valid(gh, ih, ki);
            for kj in 0..g.kernel {
                let (xlo, xhi) = g.valid(gw, iw, kj);
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * cols_per_row..][..cols_per_row];
                for s in 0..n {
                    let src = &image[(c * n + s) * ih * iw..][..ih * iw];
                    for gy in ylo..yhi {
                        let iy = gy * g.stride + ki - g.pad;
                        let src_row = &src[iy * iw..][..iw];
                        let dst_row = &mut dst[(s * gh + gy) * gw..][..gw];
                        for gx in xlo..xhi {
                            dst_row[gx] = src_row[gx * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto the image, summing overlaps.
pub fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], n: usize, image: &mut [T]) {
    let (ih, iw, gh, gw) = (g.image_h, g.image_w, g.grid_h, g.grid_w);
    let cols_per_row = n * gh * gw;
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            let (ylo, yhi) = g.valid(gh, ih, ki);
            for kj in 0..g.kernel {
                let (xlo, xhi) = g.valid(gw, iw, kj);
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * cols_per_row..][..cols_per_row];
                for s in 0..n {
                    let dst = &mut image[(c * n + s) * ih * iw..][..ih * iw];
                    for gy in ylo..yhi {
                        let iy = gy * g.stride + ki - g.pad;
                        let dst_row = &mut dst[iy * iw..][..iw];
                        let src_row = &src[(s * gh + gy) * gw..][..gw];
                        for gx in xlo..xhi {
                            dst_row[gx * g.stride + kj - g.pad] += src_row[gx];
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(data: &mut [T], bias: &[T], block: usize) {
    for (chunk, &b) in data.chunks_exact_mut(block).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &[T], block: usize) {
    for (g, chunk) in grad.iter_mut().zip(dy.chunks_exact(block)) {
        *g += chunk.iter().copied().sum::<T>();
    }
}

/// Square-kernel strided convolution. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut dyn RngCore,
        std: f64,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        Conv2d {
            weight: Param::new(&shape, normal_vec(rng, shape.iter().product(), std)),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            ConvGeometry::conv_out(h, self.kernel, self.stride, self.pad),
            ConvGeometry::conv_out(w, self.kernel, self.stride, self.pad),
        )
    }

    fn geometry(&self, x: &Tensor<T>) -> ConvGeometry {
        let (gh, gw) = self.output_size(x.h, x.w);
        ConvGeometry {
            channels: self.in_channels,
            image_h: x.h,
            image_w: x.w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            grid_h: gh,
            grid_w: gw,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let g = self.geometry(x);
        let cols = im2col(&g, &x.data, x.n);
        let ncols = x.n * g.grid_h * g.grid_w;
        let mut y = Tensor::zeros(self.out_channels, x.n, g.grid_h, g.grid_w);
        gemm(
            Mat::new(&self.weight.value, self.out_channels, g.rows()),
            Mat::new(&cols, g.rows(), ncols),
            &mut y.data,
            false,
        );
        add_bias(&mut y.data, &self.bias.value, ncols);
        y
    }

    /// Accumulates parameter gradients (when `param_grads`) and returns the
    /// input gradient (when `need_dx`).
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool, param_grads: bool) -> Option<Tensor<T>> {
        let g = self.geometry(x);
        let ncols = x.n * g.grid_h * g.grid_w;
        assert_eq!(dy.data.len(), self.out_channels * ncols, "conv output grad shape");
        if param_grads {
            let cols = im2col(&g, &x.data, x.n);
            gemm(
                Mat::new(&dy.data, self.out_channels, ncols),
                Mat::new(&cols, g.rows(), ncols).t(),
                &mut self.weight.grad,
                true,
            );
            accumulate_bias_grad(&mut self.bias.grad, &dy.data, ncols);
        }
        need_dx.then(|| {
            let mut dcols = vec![T::zero(); g.rows() * ncols];
            gemm(
                Mat::new(&self.weight.value, self.out_channels, g.rows()).t(),
                Mat::new(&dy.data, self.out_channels, ncols),
                &mut dcols,
                false,
            );
            let mut dx = Tensor::zeros(x.c, x.n, x.h, x.w);
            col2im(&g, &dcols, x.n, &mut dx.data);
            dx
        })
    }
}

/// Transposed (fractionally strided) convolution. Weight layout `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut dyn RngCore,
        std: f64,
    ) -> Self {
        let shape = [in_channels, out_channels, kernel, kernel];
        ConvTranspose2d {
            weight: Param::new(&shape, normal_vec(rng, shape.iter().product(), std)),
            bias: Param::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            ConvGeometry::transpose_out(h, self.kernel, self.stride, self.pad),
            ConvGeometry::transpose_out(w, self.kernel, self.stride, self.pad),
        )
    }

    fn geometry(&self, h: usize, w: usize) -> ConvGeometry {
        let (oh, ow) = self.output_size(h, w);
        ConvGeometry {
            channels: self.out_channels,
            image_h: oh,
            image_w: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            grid_h: h,
            grid_w: w,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_channels, "transposed conv input channels");
        let g = self.geometry(x.h, x.w);
        let ncols = x.n * x.h * x.w;
        let mut cols = vec![T::zero(); g.rows() * ncols];
        gemm(
            Mat::new(&self.weight.value, self.in_channels, g.rows()).t(),
            Mat::new(&x.data, self.in_channels, ncols),
            &mut cols,
            false,
        );
        let mut y = Tensor::zeros(self.out_channels, x.n, g.image_h, g.image_w);
        col2im(&g, &cols, x.n, &mut y.data);
        add_bias(&mut y.data, &self.bias.value, x.n * g.image_h * g.image_w);
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool, param_grads: bool) -> Option<Tensor<T>> {
        let g = self.geometry(x.h, x.w);
        let ncols = x.n * x.h * x.w;
        let dcols = im2col(&g, &dy.data, x.n);
        if param_grads {
            gemm(
                Mat::new(&x.data, self.in_channels, ncols),
                Mat::new(&dcols, g.rows(), ncols).t(),
                &mut self.weight.grad,
                true,
            );
            accumulate_bias_grad(&mut self.bias.grad, &dy.data, x.n * g.image_h * g.image_w);
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.c, x.n, x.h, x.w);
            gemm(
                Mat::new(&self.weight.value, self.in_channels, g.rows()),
                Mat::new(&dcols, g.rows(), ncols),
                &mut dx.data,
                false,
            );
            dx
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution on (C, N, H, W) data.
    fn conv_naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.h, x.w);
        let k = conv.kernel;
        let mut y = Tensor::zeros(conv.out_channels, x.n, oh, ow);
        for o in 0..conv.out_channels {
            for s in 0..x.n {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = conv.bias.value[o];
                        for i in 0..conv.in_channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (r * conv.stride + ki) as isize - conv.pad as isize;
                                    let ix = (c * conv.stride + kj) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((i * x.n + s) * x.h + iy as usize) * x.w + ix as usize];
                                    acc += conv.weight.value[((o * conv.in_channels + i) * k + ki) * k + kj] * xv;
                                }
                            }
                        }
                        y.data[((o * x.n + s) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        y
    }

    /// Scatter form of the transposed convolution.
    fn conv_t_naive(conv: &ConvTranspose2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.h, x.w);
        let k = conv.kernel;
        let mut y = Tensor::zeros(conv.out_channels, x.n, oh, ow);
        for o in 0..conv.out_channels {
            for s in 0..x.n {
                for v in &mut y.data[(o * x.n + s) * oh * ow..][..oh * ow] {
                    *v = conv.bias.value[o];
                }
            }
        }
        for i in 0..conv.in_channels {
            for s in 0..x.n {
                for r in 0..x.h {
                    for c in 0..x.w {
                        let xv = x.data[((i * x.n + s) * x.h + r) * x.w + c];
                        for o in 0..conv.out_channels {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oy = (r * conv.stride + ki) as isize - conv.pad as isize;
                                    let ox = (c * conv.stride + kj) as isize - conv.pad as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    y.data[((o * x.n + s) * oh + oy as usize) * ow + ox as usize] +=
                                        conv.weight.value[((i * conv.out_channels + o) * k + ki) * k + kj] * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_data(c, n, h, w, normal_vec(rng, c * n * h * w, 1.0))
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(h, w, k, s, p) in &[(7, 5, 3, 2, 1), (8, 8, 3, 1, 1), (5, 3, 3, 2, 1), (1, 1, 3, 2, 1), (2, 3, 3, 2, 1)] {
            let mut conv = Conv2d::<f64>::new(3, 4, k, s, p, &mut rng, 0.5);
            conv.bias.value = normal_vec(&mut rng, 4, 1.0);
            let x = random_tensor(&mut rng, 3, 2, h, w);
            let a = conv.forward(&x);
            let b = conv_naive(&conv, &x);
            assert_eq!(a.shape(), b.shape());
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_naive_and_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, &mut rng, 0.5);
        conv.bias.value = vec![0.3, -0.2];
        let x = random_tensor(&mut rng, 3, 2, 5, 3);
        let a = conv.forward(&x);
        assert_eq!(a.shape(), [2, 2, 10, 6]);
        let b = conv_t_naive(&conv, &x);
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    /// <dy, f(x)> linear in x, so dx from backward must satisfy <dx, x'> = <dy, f(x') - b>.
    #[test]
    fn backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng, 0.5);
        let x = random_tensor(&mut rng, 2, 2, 7, 6);
        let y = conv.forward(&x);
        let dy = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
        let dx = conv.backward(&x, &dy, true, true).unwrap();
        let lhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // weight gradient: <dW, W> = <dy, y - b> too
        let lw: f64 = conv.weight.grad.iter().zip(&conv.weight.value).map(|(a, b)| a * b).sum();
        assert!((lw - rhs).abs() < 1e-10);

        let mut ct = ConvTranspose2d::<f64>::new(2, 3, 4, 2, 1, &mut rng, 0.5);
        let x = random_tensor(&mut rng, 2, 2, 3, 4);
        let y = ct.forward(&x);
        let dy = random_tensor(&mut rng, y.c, y.n, y.h, y.w);
        let dx = ct.backward(&x, &dy, true, true).unwrap();
        let lhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = dy.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let lw: f64 = ct.weight.grad.iter().zip(&ct.weight.value).map(|(a, b)| a * b).sum();
        assert!((lw - rhs).abs() < 1e-10);
    }

    #[test]
    fn ceil_division_trace() {
        let mut h = 160;
        let mut w = 96;
        let mut hs = vec![h];
        let mut ws = vec![w];
        for _ in 0..8 {
            h = ConvGeometry::conv_out(h, 3, 2, 1);
            w = ConvGeometry::conv_out(w, 3, 2, 1);
            hs.push(h);
            ws.push(w);
        }
        assert_eq!(hs, vec![160, 80, 40, 20, 10, 5, 3, 2, 1]);
        assert_eq!(ws, vec![96, 48, 24, 12, 6, 3, 2, 1, 1]);
    }
}
