//! Conditional generator and discriminator.
//!
//! Generator: latent → dense → reshape to the seed map → batch-norm → ReLU,
//! concatenate the class condition map as an extra channel, then stride-2
//! transposed convolutions (batch-norm + ReLU each) and a final 3×3
//! convolution to one tanh channel.
//!
//! Discriminator: the image plus a canvas-sized class condition channel,
//! then stride-2 3×3 convolutions with LeakyReLU and dropout, batch-norm on
//! every layer except the first and the last two, and a dense sigmoid head.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, ClassMix};
use crate::nn::{
    dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, tanh_backward, BatchNorm,
    BatchNormTape, Conv2d, ConvGeometry, ConvTranspose2d, Dense, Embedding, Mode, Param, Real, Tensor,
};
use crate::pipeline::Canvas;

pub const LATENT_DIM: usize = 100;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub embed_dim: usize,
    /// (height, width) of the generator's first feature map.
    pub seed_map: (usize, usize),
    pub upsample_stages: usize,
    /// Output channels of each transposed-convolution stage; the first entry
    /// is also the channel count of the reshaped latent.
    pub gen_channels: Vec<usize>,
    pub gen_kernel: usize,
    pub disc_layers: usize,
    pub disc_channels: Vec<usize>,
    pub disc_kernel: usize,
    pub disc_stride: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: LATENT_DIM,
            embed_dim: 50,
            seed_map: (5, 3),
            upsample_stages: 5,
            gen_channels: vec![256, 128, 64, 32, 16],
            gen_kernel: 4,
            disc_layers: 8,
            disc_channels: vec![32, 64, 128, 256, 256, 256, 256, 256],
            disc_kernel: 3,
            disc_stride: 2,
            leaky_slope: 0.2,
            dropout_rate: 0.25,
            bn_momentum: 0.8,
            bn_eps: 1e-3,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Narrow variant for CPU training with `stages` upsampling stages
    /// (canvas `5·2^s × 3·2^s`).
    pub fn desk(stages: usize) -> Self {
        let gen_channels = (0..stages).map(|i| (64 >> i).max(8)).collect();
        ModelConfig {
            upsample_stages: stages,
            gen_channels,
            disc_channels: vec![16, 32, 64, 64, 64, 64, 64, 64],
            ..Self::default()
        }
    }

    /// Tiny double-precision-friendly variant used for gradient checks:
    /// 8×8 canvas, one generator stage, two discriminator layers, latent 4.
    pub fn micro() -> Self {
        ModelConfig {
            latent_dim: 4,
            seed_map: (4, 4),
            upsample_stages: 1,
            gen_channels: vec![3],
            disc_layers: 2,
            disc_channels: vec![3, 4],
            ..Self::default()
        }
    }

    /// Adjusts `upsample_stages`, keeping the channel plan consistent.
    pub fn with_stages(mut self, stages: usize) -> Self {
        let len = self.gen_channels.len();
        if stages <= len {
            self.gen_channels = self.gen_channels[len - stages..].to_vec();
        } else {
            let first = self.gen_channels.first().copied().unwrap_or(16);
            let mut head: Vec<usize> = (0..stages - len).map(|i| first << (stages - len - i)).collect();
            head.extend(&self.gen_channels);
            self.gen_channels = head;
        }
        self.upsample_stages = stages;
        self
    }

    pub fn canvas(&self) -> Canvas {
        Canvas::new(
            self.seed_map.0 << self.upsample_stages,
            self.seed_map.1 << self.upsample_stages,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 || self.embed_dim == 0 {
            return fail("latent_dim and embed_dim must be positive".into());
        }
        if self.seed_map.0 == 0 || self.seed_map.1 == 0 {
            return fail(format!("seed map must be nonempty, got {:?}", self.seed_map));
        }
        if self.upsample_stages == 0 || self.upsample_stages > 8 {
            return fail(format!("upsample_stages must be 1-8, got {}", self.upsample_stages));
        }
        if self.gen_channels.len() != self.upsample_stages || self.gen_channels.contains(&0) {
            return fail(format!(
                "gen_channels {:?} must list {} positive widths",
                self.gen_channels, self.upsample_stages
            ));
        }
        if self.disc_layers < 2 {
            return fail(format!("disc_layers must be at least 2, got {}", self.disc_layers));
        }
        if self.disc_channels.len() != self.disc_layers || self.disc_channels.contains(&0) {
            return fail(format!(
                "disc_channels {:?} must list {} positive widths",
                self.disc_channels, self.disc_layers
            ));
        }
        if self.gen_kernel < 2 || self.gen_kernel % 2 != 0 {
            return fail(format!("gen_kernel must be even, got {}", self.gen_kernel));
        }
        if self.disc_kernel % 2 == 0 || self.disc_stride == 0 {
            return fail("disc_kernel must be odd and disc_stride positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return fail("batch-norm momentum must be in [0,1) and eps positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope must be in (0,1), got {}", self.leaky_slope));
        }
        Ok(())
    }

    /// 1-based discriminator layers that carry batch-norm: all but the first and the last two.
    pub fn disc_has_bn(&self, layer: usize) -> bool {
        layer >= 2 && layer + 2 <= self.disc_layers
    }

    /// Spatial size after each discriminator layer, starting with the input.
    pub fn disc_spatial_trace(&self, canvas: Canvas) -> Vec<(usize, usize)> {
        let pad = self.disc_kernel / 2;
        let mut size = (canvas.height, canvas.width);
        let mut trace = vec![size];
        for _ in 0..self.disc_layers {
            size = (
                ConvGeometry::conv_out(size.0, self.disc_kernel, self.disc_stride, pad),
                ConvGeometry::conv_out(size.1, self.disc_kernel, self.disc_stride, pad),
            );
            trace.push(size);
        }
        trace
    }

    /// Closed-form trainable parameter counts (generator, discriminator).
    pub fn parameter_counts(&self) -> (usize, usize) {
        let classes = crate::NUM_CLASSES;
        let (h0, w0) = self.seed_map;
        let seed = h0 * w0;
        let c0 = self.gen_channels[0];
        let k = self.gen_kernel;
        let mut gen = classes * self.embed_dim
            + self.embed_dim * seed + seed
            + self.latent_dim * c0 * seed + c0 * seed
            + 2 * c0;
        let mut cin = c0 + 1;
        for &c in &self.gen_channels {
            gen += cin * c * k * k + c + 2 * c;
            cin = c;
        }
        gen += cin * 9 + 1;

        let canvas = self.canvas();
        let pixels = canvas.pixels();
        let mut disc = classes * self.embed_dim + self.embed_dim * pixels + pixels;
        let mut cin = 2;
        for (i, &c) in self.disc_channels.iter().enumerate() {
            disc += cin * c * self.disc_kernel * self.disc_kernel + c;
            if self.disc_has_bn(i + 1) {
                disc += 2 * c;
            }
            cin = c;
        }
        let (hl, wl) = *self.disc_spatial_trace(canvas).last().unwrap();
        disc += cin * hl * wl + 1;
        (gen, disc)
    }
}

/// 100-component latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeed(Vec<f64>);

impl LatentSeed {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        Self::with_dim(z, LATENT_DIM)
    }

    /// Seed for a model with a non-default latent size.
    pub fn with_dim(z: Vec<f64>, dim: usize) -> Result<Self> {
        if z.len() != dim {
            return Err(Error::Shape(format!("latent seed must have {dim} entries, got {}", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("latent seed entries must be finite".into()));
        }
        Ok(LatentSeed(z))
    }

    pub fn sample(rng: &mut dyn RngCore, dim: usize) -> Self {
        use rand::Rng;
        LatentSeed((0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `x ↦ 2x − 1`, mapping [0,1] pixels onto the tanh range.
pub fn pixel_scale(x: f32) -> f32 {
    2.0 * x - 1.0
}

/// Inverse of [`pixel_scale`].
pub fn pixel_unscale(y: f32) -> f32 {
    (y + 1.0) / 2.0
}

/// Generator network.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub cfg: ModelConfig,
    pub latent_dense: Dense<T>,
    pub latent_bn: BatchNorm<T>,
    pub label_embed: Embedding<T>,
    pub label_dense: Dense<T>,
    pub stages: Vec<(ConvTranspose2d<T>, BatchNorm<T>)>,
    pub output: Conv2d<T>,
}

/// Intermediate values of a generator forward pass.
pub struct GeneratorTape<T> {
    z: Vec<T>,
    mixes: Vec<ClassMix>,
    embedded: Vec<T>,
    latent_bn: BatchNormTape<T>,
    /// Input of each transposed-convolution stage and of the output conv.
    inputs: Vec<Tensor<T>>,
    stage_bn: Vec<BatchNormTape<T>>,
    output: Tensor<T>,
}

impl<T> GeneratorTape<T> {
    /// Generated images as (1, N, H, W), values in [-1, 1].
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Self {
        let std = cfg.init_std;
        let (h0, w0) = cfg.seed_map;
        let c0 = cfg.gen_channels[0];
        let latent_dense = Dense::new(cfg.latent_dim, c0 * h0 * w0, rng, std);
        let label_embed = Embedding::new(cfg.embed_dim, rng, std);
        let label_dense = Dense::new(cfg.embed_dim, h0 * w0, rng, std);
        let pad = (cfg.gen_kernel - 2) / 2;
        let mut cin = c0 + 1;
        let stages = cfg
            .gen_channels
            .iter()
            .map(|&c| {
                let conv = ConvTranspose2d::new(cin, c, cfg.gen_kernel, 2, pad, rng, std);
                cin = c;
                (conv, BatchNorm::new(c, cfg.bn_momentum, cfg.bn_eps))
            })
            .collect();
        let output = Conv2d::new(cin, 1, 3, 1, 1, rng, std);
        Generator {
            cfg: cfg.clone(),
            latent_dense,
            latent_bn: BatchNorm::new(c0, cfg.bn_momentum, cfg.bn_eps),
            label_embed,
            label_dense,
            stages,
            output,
        }
    }

    /// Class condition map at seed-map resolution, one row of `h0·w0` per mix.
    pub fn condition_map(&self, mixes: &[ClassMix]) -> Vec<T> {
        let embedded = self.label_embed.forward(mixes);
        self.label_dense.forward(&embedded, mixes.len())
    }

    /// `z` holds one latent row per sample.
    pub fn forward(&self, z: &[T], mixes: &[ClassMix], mode: &Mode<'_>) -> Result<GeneratorTape<T>> {
        let n = mixes.len();
        if z.len() != n * self.cfg.latent_dim {
            return Err(Error::Shape(format!(
                "generator expects {} latent values for {n} samples, got {}",
                n * self.cfg.latent_dim,
                z.len()
            )));
        }
        let train = mode.is_train();
        let (h0, w0) = self.cfg.seed_map;
        let c0 = self.cfg.gen_channels[0];

        let hidden = self.latent_dense.forward(z, n);
        let hidden = Tensor::from_rows(&hidden, c0, n, h0, w0);
        let (mut hidden, latent_bn) = self.latent_bn.forward(&hidden, train);
        relu(&mut hidden.data);

        let embedded = self.label_embed.forward(mixes);
        let cond = self.label_dense.forward(&embedded, n);
        let cond = Tensor::from_rows(&cond, 1, n, h0, w0);
        let mut x = hidden.concat_channels(&cond);

        let mut inputs = Vec::with_capacity(self.stages.len() + 1);
        let mut stage_bn = Vec::with_capacity(self.stages.len());
        for (conv, bn) in &self.stages {
            let y = conv.forward(&x);
            inputs.push(x);
            let (mut y, tape) = bn.forward(&y, train);
            relu(&mut y.data);
            stage_bn.push(tape);
            x = y;
        }
        let mut out = self.output.forward(&x);
        inputs.push(x);
        out.data.iter_mut().for_each(|v| *v = v.tanh());

        Ok(GeneratorTape {
            z: z.to_vec(),
            mixes: mixes.to_vec(),
            embedded,
            latent_bn,
            inputs,
            stage_bn,
            output: out,
        })
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, tape: &GeneratorTape<T>, d_output: &Tensor<T>) {
        let n = tape.mixes.len();
        let c0 = self.cfg.gen_channels[0];
        let mut d = d_output.clone();
        tanh_backward(&mut d.data, &tape.output.data);
        let last = tape.inputs.len() - 1;
        let mut d = self
            .output
            .backward(&tape.inputs[last], &d, true, true)
            .expect("input gradient requested");
        for (i, (conv, bn)) in self.stages.iter_mut().enumerate().rev() {
            relu_backward(&mut d.data, &tape.inputs[i + 1].data);
            let dy = bn.backward(&tape.stage_bn[i], &d, true);
            d = conv.backward(&tape.inputs[i], &dy, true, true).expect("input gradient requested");
        }

        let (mut d_hidden, d_cond) = d.split_channels(1);
        let hidden_out = &tape.inputs[0].data[..d_hidden.data.len()];
        relu_backward(&mut d_hidden.data, hidden_out);
        let d_hidden = self.latent_bn.backward(&tape.latent_bn, &d_hidden, true);
        self.latent_dense.backward(&tape.z, n, &d_hidden.to_rows(), false, true);

        let d_cond = d_cond.to_rows();
        let d_embedded = self
            .label_dense
            .backward(&tape.embedded, n, &d_cond, true, true)
            .expect("input gradient requested");
        self.label_embed.backward(&tape.mixes, &d_embedded);
        debug_assert_eq!(c0, self.latent_bn.channels());
    }

    pub fn update_running(&mut self, tape: &GeneratorTape<T>) {
        self.latent_bn.update_running(&tape.latent_bn);
        for ((_, bn), t) in self.stages.iter_mut().zip(&tape.stage_bn) {
            bn.update_running(t);
        }
    }

    /// Eval-mode images for explicit seeds, pixel range [-1, 1].
    pub fn generate(&self, seeds: &[LatentSeed], mixes: &[ClassMix]) -> Result<Vec<Vec<T>>> {
        if seeds.len() != mixes.len() {
            return Err(Error::Shape("one class mix per latent seed required".into()));
        }
        let mut z = Vec::with_capacity(seeds.len() * self.cfg.latent_dim);
        for s in seeds {
            if s.len() != self.cfg.latent_dim {
                return Err(Error::Shape(format!(
                    "latent seed must have {} entries, got {}",
                    self.cfg.latent_dim,
                    s.len()
                )));
            }
            z.extend(s.as_slice().iter().map(|&v| T::lit(v)));
        }
        let tape = self.forward(&z, mixes, &Mode::Eval)?;
        let plane = tape.output.plane();
        Ok(tape.output.data.chunks_exact(plane).map(|c| c.to_vec()).collect())
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = vec![
            ("latent_dense.weight".to_string(), &self.latent_dense.weight),
            ("latent_dense.bias".to_string(), &self.latent_dense.bias),
            ("latent_bn.gamma".to_string(), &self.latent_bn.gamma),
            ("latent_bn.beta".to_string(), &self.latent_bn.beta),
            ("label_embed.table".to_string(), &self.label_embed.table),
            ("label_dense.weight".to_string(), &self.label_dense.weight),
            ("label_dense.bias".to_string(), &self.label_dense.bias),
        ];
        for (i, (conv, bn)) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.weight"), &conv.weight));
            out.push((format!("stage{i}.bias"), &conv.bias));
            out.push((format!("stage{i}.bn.gamma"), &bn.gamma));
            out.push((format!("stage{i}.bn.beta"), &bn.beta));
        }
        out.push(("output.weight".to_string(), &self.output.weight));
        out.push(("output.bias".to_string(), &self.output.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![
            &mut self.latent_dense.weight,
            &mut self.latent_dense.bias,
            &mut self.latent_bn.gamma,
            &mut self.latent_bn.beta,
            &mut self.label_embed.table,
            &mut self.label_dense.weight,
            &mut self.label_dense.bias,
        ];
        for (conv, bn) in &mut self.stages {
            out.extend([&mut conv.weight, &mut conv.bias, &mut bn.gamma, &mut bn.beta]);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    /// Batch-norm running statistics, named.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = vec![
            ("latent_bn.running_mean".to_string(), &mut self.latent_bn.running_mean),
            ("latent_bn.running_var".to_string(), &mut self.latent_bn.running_var),
        ];
        for (i, (_, bn)) in self.stages.iter_mut().enumerate() {
            out.push((format!("stage{i}.bn.running_mean"), &mut bn.running_mean));
            out.push((format!("stage{i}.bn.running_var"), &mut bn.running_var));
        }
        out
    }
}

/// One discriminator convolution block.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscLayer<T> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm<T>>,
}

/// Discriminator network.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub cfg: ModelConfig,
    pub canvas: Canvas,
    pub label_embed: Embedding<T>,
    pub label_dense: Dense<T>,
    pub layers: Vec<DiscLayer<T>>,
    pub head: Dense<T>,
}

struct DiscLayerTape<T> {
    input: Tensor<T>,
    activated: Tensor<T>,
    mask: Option<Vec<T>>,
    bn: Option<BatchNormTape<T>>,
}

/// Intermediate values of a discriminator forward pass.
pub struct DiscriminatorTape<T> {
    mixes: Vec<ClassMix>,
    embedded: Vec<T>,
    layers: Vec<DiscLayerTape<T>>,
    flat: Vec<T>,
    logits: Vec<T>,
}

impl<T: Real> DiscriminatorTape<T> {
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    /// (height, width) of the input and of every conv layer's output, as run.
    pub fn spatial_shapes(&self) -> Vec<(usize, usize)> {
        let first = &self.layers[0].input;
        std::iter::once((first.h, first.w))
            .chain(self.layers.iter().map(|l| (l.activated.h, l.activated.w)))
            .collect()
    }
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Self {
        let std = cfg.init_std;
        let canvas = cfg.canvas();
        let label_embed = Embedding::new(cfg.embed_dim, rng, std);
        let label_dense = Dense::new(cfg.embed_dim, canvas.pixels(), rng, std);
        let pad = cfg.disc_kernel / 2;
        let mut cin = 2;
        let layers = cfg
            .disc_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv2d::new(cin, c, cfg.disc_kernel, cfg.disc_stride, pad, rng, std);
                cin = c;
                let bn = cfg
                    .disc_has_bn(i + 1)
                    .then(|| BatchNorm::new(c, cfg.bn_momentum, cfg.bn_eps));
                DiscLayer { conv, bn }
            })
            .collect();
        let (hl, wl) = *cfg.disc_spatial_trace(canvas).last().unwrap();
        let head = Dense::new(cin * hl * wl, 1, rng, std);
        Discriminator {
            cfg: cfg.clone(),
            canvas,
            label_embed,
            label_dense,
            layers,
            head,
        }
    }

    /// Canvas-sized class condition map, one row of `H·W` per mix.
    pub fn condition_map(&self, mixes: &[ClassMix]) -> Vec<T> {
        let embedded = self.label_embed.forward(mixes);
        self.label_dense.forward(&embedded, mixes.len())
    }

    /// `images` is (1, N, H, W) on the model canvas with values in [-1, 1].
    /// Dropout masks are drawn from the training generator, if any.
    pub fn forward(&self, images: &Tensor<T>, mixes: &[ClassMix], mode: &mut Mode<'_>) -> Result<DiscriminatorTape<T>> {
        let n = mixes.len();
        if images.c != 1 || images.n != n || images.h != self.canvas.height || images.w != self.canvas.width {
            return Err(Error::Shape(format!(
                "discriminator expects (1, {n}, {}, {}) images, got {:?}",
                self.canvas.height,
                self.canvas.width,
                images.shape()
            )));
        }
        let embedded = self.label_embed.forward(mixes);
        let cond = self.label_dense.forward(&embedded, n);
        let cond = Tensor::from_rows(&cond, 1, n, images.h, images.w);
        let mut x = images.clone().concat_channels(&cond);
        let slope = T::lit(self.cfg.leaky_slope);

        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut a = layer.conv.forward(&x);
            leaky_relu(&mut a.data, slope);
            let (mut y, mask) = match mode {
                Mode::Train(rng) if self.cfg.dropout_rate > 0.0 => {
                    let mask = dropout_mask::<T>(&mut **rng, a.data.len(), self.cfg.dropout_rate);
                    let mut y = a.clone();
                    y.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
                    (y, Some(mask))
                }
                _ => (a.clone(), None),
            };
            let bn = layer.bn.as_ref().map(|bn| {
                let (out, tape) = bn.forward(&y, mode.is_train());
                y = out;
                tape
            });
            tapes.push(DiscLayerTape {
                input: x,
                activated: a,
                mask,
                bn,
            });
            x = y;
        }
        let flat = x.to_rows();
        let logits = self.head.forward(&flat, n);
        Ok(DiscriminatorTape {
            mixes: mixes.to_vec(),
            embedded,
            layers: tapes,
            flat,
            logits,
        })
    }

    /// Backpropagates `d loss / d logit`. Parameter gradients accumulate only
    /// when `param_grads`; the image gradient is returned when `need_input`.
    pub fn backward(
        &mut self,
        tape: &DiscriminatorTape<T>,
        d_logits: &[T],
        param_grads: bool,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let n = tape.mixes.len();
        let d_flat = self
            .head
            .backward(&tape.flat, n, d_logits, true, param_grads)
            .expect("input gradient requested");
        let last = self.layers.len() - 1;
        let out_shape = {
            let t = &tape.layers[last].activated;
            (t.c, t.h, t.w)
        };
        let mut d = Tensor::from_rows(&d_flat, out_shape.0, n, out_shape.1, out_shape.2);
        let slope = T::lit(self.cfg.leaky_slope);
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let lt = &tape.layers[i];
            if let (Some(bn), Some(bt)) = (layer.bn.as_mut(), lt.bn.as_ref()) {
                d = bn.backward(bt, &d, param_grads);
            }
            if let Some(mask) = &lt.mask {
                d.data.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
            }
            leaky_relu_backward(&mut d.data, &lt.activated.data, slope);
            let want_dx = i > 0 || need_input || param_grads;
            match layer.conv.backward(&lt.input, &d, want_dx, param_grads) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        let (d_image, d_cond) = d.split_channels(1);
        if param_grads {
            let d_embedded = self
                .label_dense
                .backward(&tape.embedded, n, &d_cond.to_rows(), true, true)
                .expect("input gradient requested");
            self.label_embed.backward(&tape.mixes, &d_embedded);
        }
        need_input.then_some(d_image)
    }

    pub fn update_running(&mut self, tape: &DiscriminatorTape<T>) {
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(bt)) = (layer.bn.as_mut(), lt.bn.as_ref()) {
                bn.update_running(bt);
            }
        }
    }

    /// Eval-mode probabilities.
    pub fn score(&self, images: &Tensor<T>, mixes: &[ClassMix]) -> Result<Vec<T>> {
        Ok(self.forward(images, mixes, &mut Mode::Eval)?.probabilities())
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = vec![
            ("label_embed.table".to_string(), &self.label_embed.table),
            ("label_dense.weight".to_string(), &self.label_dense.weight),
            ("label_dense.bias".to_string(), &self.label_dense.bias),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &layer.conv.weight));
            out.push((format!("conv{i}.bias"), &layer.conv.bias));
            if let Some(bn) = &layer.bn {
                out.push((format!("conv{i}.bn.gamma"), &bn.gamma));
                out.push((format!("conv{i}.bn.beta"), &bn.beta));
            }
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![
            &mut self.label_embed.table,
            &mut self.label_dense.weight,
            &mut self.label_dense.bias,
        ];
        for layer in &mut self.layers {
            out.push(&mut layer.conv.weight);
            out.push(&mut layer.conv.bias);
            if let Some(bn) = &mut layer.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some(bn) = &mut layer.bn {
                out.push((format!("conv{i}.bn.running_mean"), &mut bn.running_mean));
                out.push((format!("conv{i}.bn.running_var"), &mut bn.running_var));
            }
        }
        out
    }
}

/// Both networks plus the seed they were initialised from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub init_seed: u64,
}

/// Normal(0, init_std) weights and embeddings, zero biases, unit batch-norm
/// scales. Deterministic in `seed`.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let generator = Generator::new(cfg, &mut rng);
    rng.set_stream(1);
    rng.set_word_pos(0);
    let discriminator = Discriminator::new(cfg, &mut rng);
    Ok(ModelParams {
        generator,
        discriminator,
        init_seed: seed,
    })
}

impl<T: Real> ModelParams<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.generator.cfg
    }

    pub fn canvas(&self) -> Canvas {
        self.discriminator.canvas
    }

    pub fn all_finite(&self) -> bool {
        let g = self.generator.params();
        let d = self.discriminator.params();
        g.iter().chain(&d).all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
    }
}

/// One-hot mixes for a slice of labels.
pub fn one_hot_mixes(labels: &[ClassLabel]) -> Vec<ClassMix> {
    labels.iter().map(|&l| ClassMix::one_hot(l)).collect()
}

/// Stacks flat images into a (1, N, H, W) tensor.
pub fn image_batch<T: Real>(images: &[&[T]], canvas: Canvas) -> Tensor<T> {
    let mut data = Vec::with_capacity(images.len() * canvas.pixels());
    for img in images {
        assert_eq!(img.len(), canvas.pixels(), "image size");
        data.extend_from_slice(img);
    }
    Tensor::from_data(1, images.len(), canvas.height, canvas.width, data)
}
