//! Adversarial training: alternating discriminator/generator Adam steps with
//! binary cross-entropy, per-epoch history and resumable checkpoints.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_SCHEMA};
pub use loss::{bce, bce_from_logits, BCE_EPS};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, ClassMix, NUM_CLASSES};
use crate::model::{image_batch, init_params, one_hot_mixes, pixel_scale, ModelConfig, ModelParams};
use crate::nn::{normal_vec, Mode, Real, Tensor};
use crate::pipeline::{Canvas, MipImage};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            rng_seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Per-epoch means of the step metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub d_loss_real: f64,
    pub d_loss_fake: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,d_loss_real,d_loss_fake,g_loss,d_acc";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.d_loss_real, r.d_loss_fake, r.g_loss, r.d_accuracy
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Data("history CSV header mismatch".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Data(format!("bad history row `{l}`")))
                };
                Ok(HistoryRow {
                    epoch: num(0)? as usize,
                    d_loss_real: num(1)?,
                    d_loss_fake: num(2)?,
                    g_loss: num(3)?,
                    d_accuracy: num(4)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainHistory { rows })
    }
}

/// Adam state for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub generator: Adam<T>,
    pub discriminator: Adam<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(cfg: AdamConfig, params: &mut ModelParams<T>) -> Self {
        OptimizerState {
            generator: Adam::for_params(cfg, &params.generator.params_mut()),
            discriminator: Adam::for_params(cfg, &params.discriminator.params_mut()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub d_loss_real: f64,
    pub d_loss_fake: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

/// Training images in the generator's [-1, 1] range with their labels.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub canvas: Canvas,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<ClassLabel>,
}

impl TrainingSet {
    pub fn from_mips(mips: &[MipImage]) -> Result<Self> {
        let first = mips.first().ok_or_else(|| Error::Data("training corpus is empty".into()))?;
        let canvas = Canvas::new(first.image.height, first.image.width);
        let mut images = Vec::with_capacity(mips.len());
        let mut labels = Vec::with_capacity(mips.len());
        for m in mips {
            if (m.image.height, m.image.width) != (canvas.height, canvas.width) {
                return Err(Error::Shape(format!(
                    "image {} is {}x{}, expected {}x{}",
                    m.source_id, m.image.height, m.image.width, canvas.height, canvas.width
                )));
            }
            images.push(m.image.pixels.iter().map(|&p| pixel_scale(p)).collect());
            labels.push(m.label);
        }
        let set = TrainingSet { canvas, images, labels };
        set.validate()?;
        Ok(set)
    }

    /// Nonempty, and every class present at least once.
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        let mut seen = [false; NUM_CLASSES];
        self.labels.iter().for_each(|l| seen[l.code()] = true);
        let missing: Vec<&str> = ClassLabel::ALL
            .iter()
            .filter(|c| !seen[c.code()])
            .map(|c| c.name())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "training corpus has no images of class {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<ClassLabel>) {
        let refs: Vec<&[f32]> = indices.iter().map(|&i| self.images[i].as_slice()).collect();
        (
            image_batch(&refs, self.canvas),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn zero_grads<T: Real>(params: &mut [&mut crate::nn::Param<T>]) {
    params.iter_mut().for_each(|p| p.zero_grad());
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch: 0,
            step: 0,
            detail: format!("non-finite {what}: {values:?}"),
        })
    }
}

/// One discriminator Adam step on `BCE(D(real), 1) + BCE(D(fake), 0)`.
/// Real and fake batches are normalised separately. Returns
/// (loss_real, loss_fake, accuracy at threshold 0.5).
pub fn discriminator_step<T: Real>(
    params: &mut ModelParams<T>,
    opt: &mut Adam<T>,
    real: &Tensor<T>,
    real_mixes: &[ClassMix],
    fake: &Tensor<T>,
    fake_mixes: &[ClassMix],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64)> {
    let d = &mut params.discriminator;
    zero_grads(&mut d.params_mut());

    let tape_real = d.forward(real, real_mixes, &mut Mode::Train(&mut *rng))?;
    let (loss_real, grad_real) = bce_from_logits(tape_real.logits(), 1.0);
    let tape_fake = d.forward(fake, fake_mixes, &mut Mode::Train(&mut *rng))?;
    let (loss_fake, grad_fake) = bce_from_logits(tape_fake.logits(), 0.0);
    check_finite(&[loss_real, loss_fake], "discriminator loss")?;

    d.backward(&tape_real, &grad_real, true, false);
    d.backward(&tape_fake, &grad_fake, true, false);
    d.update_running(&tape_real);
    d.update_running(&tape_fake);
    opt.update(&mut d.params_mut());

    let half = T::lit(0.5);
    let correct = tape_real.probabilities().iter().filter(|&&p| p > half).count()
        + tape_fake.probabilities().iter().filter(|&&p| p < half).count();
    let accuracy = correct as f64 / (real_mixes.len() + fake_mixes.len()) as f64;
    Ok((loss_real, loss_fake, accuracy))
}

/// Draws `n` latent rows and uniformly random class labels.
pub fn sample_latents<T: Real>(rng: &mut ChaCha8Rng, n: usize, latent_dim: usize) -> (Vec<T>, Vec<ClassLabel>) {
    let z = normal_vec(rng, n * latent_dim, 1.0);
    let labels = (0..n).map(|_| ClassLabel::ALL[rng.random_range(0..NUM_CLASSES)]).collect();
    (z, labels)
}

/// One adversarial step: a discriminator update on the real batch against
/// fresh fakes, then a generator update through the updated discriminator
/// on the same latents.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    opt: &mut OptimizerState<T>,
    real: &Tensor<T>,
    real_labels: &[ClassLabel],
    rng: &mut ChaCha8Rng,
) -> Result<StepMetrics> {
    let n = real_labels.len();
    let latent_dim = params.config().latent_dim;
    let (z, fake_labels) = sample_latents::<T>(rng, n, latent_dim);
    let real_mixes = one_hot_mixes(real_labels);
    let fake_mixes = one_hot_mixes(&fake_labels);

    let gen_tape = params.generator.forward(&z, &fake_mixes, &Mode::Train(&mut *rng))?;
    params.generator.update_running(&gen_tape);
    let fake = gen_tape.output().clone();

    let (d_loss_real, d_loss_fake, d_accuracy) = discriminator_step(
        params,
        &mut opt.discriminator,
        real,
        &real_mixes,
        &fake,
        &fake_mixes,
        rng,
    )?;

    let g = &mut params.generator;
    zero_grads(&mut g.params_mut());
    let tape = params.discriminator.forward(&fake, &fake_mixes, &mut Mode::Train(&mut *rng))?;
    let (g_loss, grad) = bce_from_logits(tape.logits(), 1.0);
    check_finite(&[g_loss], "generator loss")?;
    let d_image = params
        .discriminator
        .backward(&tape, &grad, false, true)
        .expect("image gradient requested");
    g.backward(&gen_tape, &d_image);
    opt.generator.update(&mut g.params_mut());

    Ok(StepMetrics {
        d_loss_real,
        d_loss_fake,
        g_loss,
        d_accuracy,
    })
}

/// Training state: everything a checkpoint holds, plus the history.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub ckpt: ModelCheckpoint,
    pub history: TrainHistory,
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Self> {
        model_cfg.validate()?;
        train_cfg.validate()?;
        let mut params = init_params::<f32>(model_cfg, train_cfg.rng_seed)?;
        let optimizer = OptimizerState::new(train_cfg.adam(), &mut params);
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.rng_seed);
        rng.set_stream(2);
        Ok(Trainer {
            ckpt: ModelCheckpoint {
                params,
                optimizer,
                model_cfg: model_cfg.clone(),
                train_cfg: train_cfg.clone(),
                epoch: 0,
                rng,
            },
            history: TrainHistory::default(),
        })
    }

    /// Continues from a checkpoint; `history` should hold its completed epochs.
    pub fn resume(ckpt: ModelCheckpoint, history: TrainHistory) -> Self {
        Trainer { ckpt, history }
    }

    pub fn steps_per_epoch(&self, data: &TrainingSet) -> usize {
        data.len().div_ceil(self.ckpt.train_cfg.batch_size)
    }

    /// One pass over a fresh seeded shuffle of `data`.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<HistoryRow> {
        data.validate()?;
        let canvas = self.ckpt.model_cfg.canvas();
        if data.canvas != canvas {
            return Err(Error::Shape(format!(
                "training images are {}x{} but the model canvas is {}x{}",
                data.canvas.height, data.canvas.width, canvas.height, canvas.width
            )));
        }
        let ckpt = &mut self.ckpt;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ckpt.rng);

        let epoch = ckpt.epoch + 1;
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(ckpt.train_cfg.batch_size).enumerate() {
            let (real, labels) = data.batch(chunk);
            let m = train_step(&mut ckpt.params, &mut ckpt.optimizer, &real, &labels, &mut ckpt.rng).map_err(
                |e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { epoch, step, detail },
                    other => other,
                },
            )?;
            sums[0] += m.d_loss_real;
            sums[1] += m.d_loss_fake;
            sums[2] += m.g_loss;
            sums[3] += m.d_accuracy;
            steps += 1;
        }
        let k = steps as f64;
        let row = HistoryRow {
            epoch,
            d_loss_real: sums[0] / k,
            d_loss_fake: sums[1] / k,
            g_loss: sums[2] / k,
            d_accuracy: sums[3] / k,
        };
        ckpt.epoch = epoch;
        self.history.rows.push(row);
        Ok(row)
    }

    /// Trains up to the configured epoch count. With `out_dir`, writes
    /// `checkpoint/` every `checkpoint_every` epochs and at the end, and
    /// `history.csv` alongside; on divergence the last checkpoint stays.
    pub fn run(&mut self, data: &TrainingSet, out_dir: Option<&Path>) -> Result<()> {
        while self.ckpt.epoch < self.ckpt.train_cfg.epochs {
            self.run_epoch(data)?;
            let epoch = self.ckpt.epoch;
            if let Some(dir) = out_dir {
                if epoch % self.ckpt.train_cfg.checkpoint_every == 0 || epoch == self.ckpt.train_cfg.epochs {
                    self.save(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(&self.ckpt, &dir.join("checkpoint"))?;
        crate::io::write_atomic(&dir.join("history.csv"), self.history.to_csv().as_bytes())
    }
}

/// Trains from scratch on `data`.
pub fn train(data: &TrainingSet, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<(ModelCheckpoint, TrainHistory)> {
    let mut trainer = Trainer::new(model_cfg, train_cfg)?;
    trainer.run(data, None)?;
    Ok((trainer.ckpt, trainer.history))
}
