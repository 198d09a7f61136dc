use rand::{Rng, RngCore};

use super::{gemm, normal_vec, Mat, Param, Real, Tensor};
use crate::label::{ClassMix, NUM_CLASSES};

/// Fully connected layer. Weight layout `[out, in]`, inputs are per-sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub inputs: usize,
    pub outputs: usize,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut dyn RngCore, std: f64) -> Self {
        Dense {
            weight: Param::new(&[outputs, inputs], normal_vec(rng, inputs * outputs, std)),
            bias: Param::zeros(&[outputs]),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        assert_eq!(x.len(), n * self.inputs, "dense input shape");
        let mut y = vec![T::zero(); n * self.outputs];
        gemm(
            Mat::new(x, n, self.inputs),
            Mat::new(&self.weight.value, self.outputs, self.inputs).t(),
            &mut y,
            false,
        );
        for row in y.chunks_exact_mut(self.outputs) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, &b)| *v += b);
        }
        y
    }

    pub fn backward(&mut self, x: &[T], n: usize, dy: &[T], need_dx: bool, param_grads: bool) -> Option<Vec<T>> {
        if param_grads {
            gemm(
                Mat::new(dy, n, self.outputs).t(),
                Mat::new(x, n, self.inputs),
                &mut self.weight.grad,
                true,
            );
            for row in dy.chunks_exact(self.outputs) {
                self.bias.grad.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
            }
        }
        need_dx.then(|| {
            let mut dx = vec![T::zero(); n * self.inputs];
            gemm(
                Mat::new(dy, n, self.outputs),
                Mat::new(&self.weight.value, self.outputs, self.inputs),
                &mut dx,
                false,
            );
            dx
        })
    }
}

/// Class embedding table `[classes, dim]`. A class mix looks up the
/// weighted sum of rows, so one-hot mixes are plain lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub table: Param<T>,
    pub dim: usize,
}

impl<T: Real> Embedding<T> {
    pub fn new(dim: usize, rng: &mut dyn RngCore, std: f64) -> Self {
        Embedding {
            table: Param::new(&[NUM_CLASSES, dim], normal_vec(rng, NUM_CLASSES * dim, std)),
            dim,
        }
    }

    pub fn forward(&self, mixes: &[ClassMix]) -> Vec<T> {
        let mut out = vec![T::zero(); mixes.len() * self.dim];
        for (row, mix) in out.chunks_exact_mut(self.dim).zip(mixes) {
            for (c, &w) in mix.0.iter().enumerate() {
                let w = T::lit(w);
                let src = &self.table.value[c * self.dim..][..self.dim];
                row.iter_mut().zip(src).for_each(|(o, &e)| *o += w * e);
            }
        }
        out
    }

    pub fn backward(&mut self, mixes: &[ClassMix], dy: &[T]) {
        for (row, mix) in dy.chunks_exact(self.dim).zip(mixes) {
            for (c, &w) in mix.0.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let w = T::lit(w);
                let g = &mut self.table.grad[c * self.dim..][..self.dim];
                g.iter_mut().zip(row).for_each(|(g, &d)| *g += w * d);
            }
        }
    }
}

/// Per-channel batch normalisation with exponential running statistics
/// (`running = momentum * running + (1 - momentum) * batch`).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchNormTape<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    batch_stats: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Param::filled(&[channels], T::one()),
            beta: Param::zeros(&[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(momentum),
            eps: T::lit(eps),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor<T>, batch_stats: bool) -> (Tensor<T>, BatchNormTape<T>) {
        assert_eq!(x.c, self.channels(), "batch-norm channels");
        let block = x.n * x.plane();
        let count = T::from_usize(block).expect("block size");
        let mut y = x.clone();
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = Vec::with_capacity(x.c);
        let mut batch_mean = Vec::with_capacity(x.c);
        let mut batch_var = Vec::with_capacity(x.c);
        for c in 0..x.c {
            let src = &x.data[c * block..][..block];
            let (mean, var) = if batch_stats {
                let mean = src.iter().copied().sum::<T>() / count;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
                (mean, var)
            } else {
                (self.running_mean[c], self.running_var[c])
            };
            let istd = T::one() / (var + self.eps).sqrt();
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let dst = &mut y.data[c * block..][..block];
            let xh = &mut xhat[c * block..][..block];
            for ((d, h), &s) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                *h = (s - mean) * istd;
                *d = g * *h + b;
            }
            inv_std.push(istd);
            batch_mean.push(mean);
            batch_var.push(var);
        }
        let tape = BatchNormTape {
            xhat,
            inv_std,
            batch_mean,
            batch_var,
            batch_stats,
        };
        (y, tape)
    }

    /// Folds the batch statistics of a training forward into the running estimates.
    pub fn update_running(&mut self, tape: &BatchNormTape<T>) {
        if !tape.batch_stats {
            return;
        }
        let block = tape.xhat.len() / self.channels();
        let m = self.momentum;
        let keep = T::one() - m;
        let unbias = if block > 1 {
            T::from_usize(block).unwrap() / T::from_usize(block - 1).unwrap()
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + keep * tape.batch_mean[c];
            self.running_var[c] = m * self.running_var[c] + keep * tape.batch_var[c] * unbias;
        }
    }

    pub fn backward(&mut self, tape: &BatchNormTape<T>, dy: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let block = dy.n * dy.plane();
        let count = T::from_usize(block).unwrap();
        let mut dx = dy.clone();
        for c in 0..dy.c {
            let d = &dy.data[c * block..][..block];
            let xh = &tape.xhat[c * block..][..block];
            let sum_dy = d.iter().copied().sum::<T>();
            let sum_dy_xhat = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            if param_grads {
                self.gamma.grad[c] += sum_dy_xhat;
                self.beta.grad[c] += sum_dy;
            }
            let scale = self.gamma.value[c] * tape.inv_std[c];
            let out = &mut dx.data[c * block..][..block];
            if tape.batch_stats {
                let mean_dy = sum_dy / count;
                let mean_dy_xhat = sum_dy_xhat / count;
                for ((o, &g), &h) in out.iter_mut().zip(d).zip(xh) {
                    *o = scale * (g - mean_dy - h * mean_dy_xhat);
                }
            } else {
                out.iter_mut().zip(d).for_each(|(o, &g)| *o = scale * g);
            }
        }
        dx
    }
}

pub fn relu<T: Real>(data: &mut [T]) {
    data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(dy: &mut [T], y: &[T]) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
}

pub fn leaky_relu<T: Real>(data: &mut [T], slope: T) {
    data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = *v * slope;
        }
    });
}

/// Gradient through a leaky ReLU given its output (sign is preserved for slope > 0).
pub fn leaky_relu_backward<T: Real>(dy: &mut [T], y: &[T], slope: T) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| {
        if v < T::zero() {
            *d = *d * slope;
        }
    });
}

pub fn tanh_backward<T: Real>(dy: &mut [T], y: &[T]) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| *d = *d * (T::one() - v * v));
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Real>(rng: &mut dyn RngCore, len: usize, rate: f64) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}
