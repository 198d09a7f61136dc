//! Conditional sampling and the per-class quality report: does the
//! generator draw the class it was asked for, how close do samples sit to
//! the training set, and how real does the discriminator find them.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, ClassMix, NUM_CLASSES};
use crate::model::{image_batch, pixel_unscale, LatentSeed, ModelParams};
use crate::phantom::{derive_seed, RegionClassifier};
use crate::pipeline::Image2D;
use crate::walk::nn_memorization_score;

/// `count` latent seeds drawn from `seed`.
pub fn sample_seeds(seed: u64, count: usize, dim: usize) -> Vec<LatentSeed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| LatentSeed::sample(&mut rng, dim)).collect()
}

/// Eval-mode samples of one class in [0, 1], with discriminator scores.
pub fn generate_class(params: &ModelParams<f32>, label: ClassLabel, seeds: &[LatentSeed]) -> Result<(Vec<Image2D>, Vec<f64>)> {
    let canvas = params.canvas();
    let mix = ClassMix::one_hot(label);
    let mut images = Vec::with_capacity(seeds.len());
    let mut realism = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(16) {
        let mixes = vec![mix; chunk.len()];
        let raw = params.generator.generate(chunk, &mixes)?;
        let refs: Vec<&[f32]> = raw.iter().map(Vec::as_slice).collect();
        let scores = params.discriminator.score(&image_batch(&refs, canvas), &mixes)?;
        realism.extend(scores.iter().map(|&s| s as f64));
        for r in raw {
            let pixels = r.iter().map(|&v| pixel_unscale(v)).collect();
            images.push(Image2D::new(canvas.height, canvas.width, pixels)?);
        }
    }
    Ok((images, realism))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub label: ClassLabel,
    pub count: usize,
    /// Fraction classified as `label` by the region classifier.
    pub accuracy: f64,
    pub mean_nn_distance: Option<f64>,
    pub mean_realism: f64,
    /// Classifier votes, indexed by class code.
    pub votes: [usize; NUM_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "class,n,accuracy,mean_nn_distance,mean_realism";

    pub fn overall_accuracy(&self) -> f64 {
        let n: usize = self.classes.iter().map(|c| c.count).sum();
        let hits: f64 = self.classes.iter().map(|c| c.accuracy * c.count as f64).sum();
        hits / n as f64
    }

    /// One row per class, then an `all` row of sample-weighted means.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let nn = |v: Option<f64>| v.map(|d| d.to_string()).unwrap_or_default();
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.label,
                c.count,
                c.accuracy,
                nn(c.mean_nn_distance),
                c.mean_realism
            );
        }
        let n: usize = self.classes.iter().map(|c| c.count).sum();
        let mean = |f: &dyn Fn(&ClassReport) -> f64| {
            self.classes.iter().map(|c| f(c) * c.count as f64).sum::<f64>() / n as f64
        };
        let all_nn = self
            .classes
            .iter()
            .all(|c| c.mean_nn_distance.is_some())
            .then(|| mean(&|c| c.mean_nn_distance.unwrap_or(0.0)));
        let _ = writeln!(
            out,
            "all,{n},{},{},{}",
            self.overall_accuracy(),
            nn(all_nn),
            mean(&|c| c.mean_realism)
        );
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Generates `per_class` samples of every class (seeds derived from `seed`)
/// and scores them. `reference` enables nearest-neighbour distances.
pub fn evaluate(
    params: &ModelParams<f32>,
    classifier: &RegionClassifier,
    per_class: usize,
    seed: u64,
    reference: Option<&[Image2D]>,
) -> Result<EvalReport> {
    if per_class == 0 {
        return Err(Error::Config("evaluation needs at least one sample per class".into()));
    }
    if classifier.canvas() != params.canvas() {
        return Err(Error::CheckpointMismatch(format!(
            "classifier canvas {:?} differs from model canvas {:?}",
            classifier.canvas(),
            params.canvas()
        )));
    }
    let dim = params.config().latent_dim;
    let classes = ClassLabel::ALL
        .iter()
        .map(|&label| {
            let seeds = sample_seeds(derive_seed(seed, label, 0), per_class, dim);
            let (images, realism) = generate_class(params, label, &seeds)?;
            let mut votes = [0usize; NUM_CLASSES];
            images.iter().for_each(|img| votes[classifier.classify(img).code()] += 1);
            let mean_nn_distance = reference
                .map(|r| nn_memorization_score(&images, r))
                .transpose()?
                .map(|d| mean(&d));
            Ok(ClassReport {
                label,
                count: per_class,
                accuracy: votes[label.code()] as f64 / per_class as f64,
                mean_nn_distance,
                mean_realism: mean(&realism),
                votes,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { classes })
}
