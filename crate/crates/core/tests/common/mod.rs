//! Independent oracles shared by the integration tests. Nothing here calls
//! the code path it checks.
#![allow(dead_code)]

use petgan::label::ClassMix;
use petgan::model::{init_params, one_hot_mixes, ModelConfig, ModelParams};
use petgan::nn::{Mode, Tensor};
use petgan::phantom::Volume3D;
use petgan::ClassLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nearest input index along one axis by explicit search over all input
/// centres, ties to the lower index.
pub fn nearest_index(out_idx: usize, in_len: usize, in_spacing: f64, target: f64) -> usize {
    let centre = (out_idx as f64 + 0.5) * target;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..in_len {
        let d = ((i as f64 + 0.5) * in_spacing - centre).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn brute_resample(v: &Volume3D, target: f64) -> (Vec<usize>, Vec<f32>) {
    let dims = v.dims();
    let sp = v.spacing_mm();
    let out: Vec<usize> = (0..3)
        .map(|a| ((dims[a] as f64 * sp[a] / target).round() as usize).max(1))
        .collect();
    let mut vals = Vec::new();
    for k in 0..out[0] {
        for j in 0..out[1] {
            for i in 0..out[2] {
                let src = [
                    nearest_index(k, dims[0], sp[0], target),
                    nearest_index(j, dims[1], sp[1], target),
                    nearest_index(i, dims[2], sp[2], target),
                ];
                vals.push(v.voxels()[(src[0] * dims[1] + src[1]) * dims[2] + src[2]]);
            }
        }
    }
    (out, vals)
}

/// (rows, cols, pixels) of the max over axis 1 (y) or 2 (x).
pub fn brute_mip(v: &Volume3D, axis: usize) -> (usize, usize, Vec<f64>) {
    let [z, y, x] = v.dims();
    let at = |k: usize, j: usize, i: usize| v.voxels()[(k * y + j) * x + i] as f64;
    let (cols, depth) = if axis == 1 { (x, y) } else { (y, x) };
    let mut out = vec![f64::NEG_INFINITY; z * cols];
    for k in 0..z {
        for c in 0..cols {
            for d in 0..depth {
                let val = if axis == 1 { at(k, d, c) } else { at(k, c, d) };
                if val > out[k * cols + c] {
                    out[k * cols + c] = val;
                }
            }
        }
    }
    (z, cols, out)
}

/// Textbook Adam on scalars.
pub struct ScalarAdam {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new(n: usize, lr: f64, b1: f64, b2: f64, eps: f64) -> Self {
        ScalarAdam {
            lr,
            b1,
            b2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..w.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[i] / (1.0 - self.b2.powi(self.t));
            w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Mean BCE written out longhand, with the same probability clamp.
pub fn scalar_bce(probs: &[f64], target: f64) -> f64 {
    let eps = 1e-7;
    let mut s = 0.0;
    for &p in probs {
        let p = p.clamp(eps, 1.0 - eps);
        s += -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
    }
    s / probs.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fixed inputs for the adversarial objectives on a small f64 model.
pub struct GradProblem {
    pub params: ModelParams<f64>,
    pub real: Tensor<f64>,
    pub real_mixes: Vec<ClassMix>,
    pub z: Vec<f64>,
    pub fake_mixes: Vec<ClassMix>,
    pub dropout_seed: u64,
}

impl GradProblem {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let params = init_params::<f64>(cfg, seed).unwrap();
        let canvas = cfg.canvas();
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let real: Vec<f64> = (0..n * canvas.pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n * cfg.latent_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::ALL[i % 5]).collect();
        let fake_labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::ALL[(i + 2) % 5]).collect();
        GradProblem {
            params,
            real: Tensor::from_data(1, n, canvas.height, canvas.width, real),
            real_mixes: one_hot_mixes(&labels),
            z,
            fake_mixes: one_hot_mixes(&fake_labels),
            dropout_seed: seed.wrapping_add(99),
        }
    }

    fn fake(&self, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        self.params
            .generator
            .forward(&self.z, &self.fake_mixes, &Mode::Train(rng))
            .unwrap()
            .output()
            .clone()
    }

    /// BCE(D(real), 1) + BCE(D(G(z)), 0), batch statistics and a fixed
    /// dropout stream.
    pub fn d_loss(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let fake = self.fake(&mut rng);
        let d = &self.params.discriminator;
        let lr = d.forward(&self.real, &self.real_mixes, &mut Mode::Train(&mut rng)).unwrap();
        let lf = d.forward(&fake, &self.fake_mixes, &mut Mode::Train(&mut rng)).unwrap();
        let pr: Vec<f64> = lr.logits().iter().map(|&x| sigmoid(x)).collect();
        let pf: Vec<f64> = lf.logits().iter().map(|&x| sigmoid(x)).collect();
        scalar_bce(&pr, 1.0) + scalar_bce(&pf, 0.0)
    }

    /// BCE(D(G(z)), 1).
    pub fn g_loss(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let fake = self.fake(&mut rng);
        let lf = self
            .params
            .discriminator
            .forward(&fake, &self.fake_mixes, &mut Mode::Train(&mut rng))
            .unwrap();
        let pf: Vec<f64> = lf.logits().iter().map(|&x| sigmoid(x)).collect();
        scalar_bce(&pf, 1.0)
    }

    /// Analytic gradients of `d_loss` w.r.t. discriminator parameters,
    /// in `params_mut` order.
    pub fn d_grads(&mut self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let fake = self.fake(&mut rng);
        let d = &mut self.params.discriminator;
        d.params_mut().iter_mut().for_each(|p| p.zero_grad());
        let tr = d.forward(&self.real, &self.real_mixes, &mut Mode::Train(&mut rng)).unwrap();
        let tf = d.forward(&fake, &self.fake_mixes, &mut Mode::Train(&mut rng)).unwrap();
        let (_, gr) = petgan::train::bce_from_logits(tr.logits(), 1.0);
        let (_, gf) = petgan::train::bce_from_logits(tf.logits(), 0.0);
        d.backward(&tr, &gr, true, false);
        d.backward(&tf, &gf, true, false);
        d.params_mut().iter().map(|p| p.grad.clone()).collect()
    }

    pub fn g_grads(&mut self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let tape = self
            .params
            .generator
            .forward(&self.z, &self.fake_mixes, &Mode::Train(&mut rng))
            .unwrap();
        let g = &mut self.params.generator;
        g.params_mut().iter_mut().for_each(|p| p.zero_grad());
        let d = &mut self.params.discriminator;
        let tf = d.forward(tape.output(), &self.fake_mixes, &mut Mode::Train(&mut rng)).unwrap();
        let (_, gf) = petgan::train::bce_from_logits(tf.logits(), 1.0);
        let d_img = d.backward(&tf, &gf, false, true).unwrap();
        g.backward(&tape, &d_img);
        g.params_mut().iter().map(|p| p.grad.clone()).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Net {
    Generator,
    Discriminator,
}

impl GradProblem {
    fn nudge(&mut self, net: Net, pi: usize, j: usize, delta: f64) {
        let mut ps = match net {
            Net::Generator => self.params.generator.params_mut(),
            Net::Discriminator => self.params.discriminator.params_mut(),
        };
        ps[pi].value[j] += delta;
    }

    fn loss(&self, net: Net) -> f64 {
        match net {
            Net::Generator => self.g_loss(),
            Net::Discriminator => self.d_loss(),
        }
    }

    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
    /// over every parameter of `net`, by central differences with step `h`.
    /// Returns (worst error, parameters checked).
    pub fn check(&mut self, net: Net, h: f64, floor: f64) -> (f64, usize) {
        let analytic = match net {
            Net::Generator => self.g_grads(),
            Net::Discriminator => self.d_grads(),
        };
        let mut worst = 0.0f64;
        let mut count = 0;
        for (pi, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                self.nudge(net, pi, j, h);
                let up = self.loss(net);
                self.nudge(net, pi, j, -2.0 * h);
                let down = self.loss(net);
                self.nudge(net, pi, j, h);
                let numeric = (up - down) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
                count += 1;
            }
        }
        (worst, count)
    }
}
