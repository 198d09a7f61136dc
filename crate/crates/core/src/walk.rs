//! Latent-space walks and the metrics that tell a generator that blends
//! its training images apart from one that composes new ones.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, ClassMix};
use crate::model::{image_batch, pixel_unscale, LatentSeed, ModelParams, LATENT_DIM};
use crate::pipeline::{Canvas, Image2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkMode {
    /// `[a, 0, …, 0]` to `[b, 0, …, 0]`.
    FirstCoord,
    /// Straight line between two seeds.
    Lerp,
    /// Straight line between two seeds while blending two class conditions.
    LabelLerp,
}

impl FromStr for WalkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-coord" | "first_coord" => Ok(WalkMode::FirstCoord),
            "lerp" => Ok(WalkMode::Lerp),
            "label-lerp" | "label_lerp" => Ok(WalkMode::LabelLerp),
            other => Err(Error::Config(format!(
                "unknown walk mode `{other}` (valid: first-coord, lerp, label-lerp)"
            ))),
        }
    }
}

impl fmt::Display for WalkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            WalkMode::FirstCoord => "first-coord",
            WalkMode::Lerp => "lerp",
            WalkMode::LabelLerp => "label-lerp",
        })
    }
}

/// `t_k = k / (n - 1)`, exact at both ends.
pub fn walk_fractions(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| if k + 1 == n { 1.0 } else { k as f64 / (n - 1) as f64 })
        .collect()
}

fn check_steps(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("a walk needs at least 2 steps, got {n}")));
    }
    Ok(())
}

/// `seed_k = [a + k (b - a) / (n - 1), 0, …, 0]` of length `dim`.
pub fn seed_sequence_first_coord(a: f64, b: f64, n: usize, dim: usize) -> Result<Vec<LatentSeed>> {
    check_steps(n)?;
    (0..n)
        .map(|k| {
            let first = if k + 1 == n {
                b
            } else {
                a + k as f64 * (b - a) / (n - 1) as f64
            };
            let mut z = vec![0.0; dim];
            z[0] = first;
            LatentSeed::with_dim(z, dim)
        })
        .collect()
}

/// `z_k = (1 - t_k) z_a + t_k z_b`.
pub fn lerp_seeds(z_a: &LatentSeed, z_b: &LatentSeed, n: usize) -> Result<Vec<LatentSeed>> {
    check_steps(n)?;
    if z_a.len() != z_b.len() {
        return Err(Error::Shape(format!(
            "seed lengths differ: {} vs {}",
            z_a.len(),
            z_b.len()
        )));
    }
    walk_fractions(n)
        .into_iter()
        .map(|t| {
            let z = z_a
                .as_slice()
                .iter()
                .zip(z_b.as_slice())
                .map(|(&a, &b)| (1.0 - t) * a + t * b)
                .collect();
            LatentSeed::with_dim(z, z_a.len())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSpec {
    pub mode: WalkMode,
    pub z_start: LatentSeed,
    pub z_end: LatentSeed,
    pub a: f64,
    pub b: f64,
    pub steps: usize,
    /// Condition for the whole walk, or the starting class in `LabelLerp`.
    pub label_start: ClassLabel,
    pub label_end: ClassLabel,
}

impl WalkSpec {
    pub fn first_coord(a: f64, b: f64, steps: usize, label: ClassLabel, dim: usize) -> Self {
        let zero = LatentSeed::with_dim(vec![0.0; dim], dim).expect("finite zeros");
        WalkSpec {
            mode: WalkMode::FirstCoord,
            z_start: zero.clone(),
            z_end: zero,
            a,
            b,
            steps,
            label_start: label,
            label_end: label,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.z_start.len()
    }

    pub fn fractions(&self) -> Vec<f64> {
        walk_fractions(self.steps)
    }

    pub fn seeds(&self) -> Result<Vec<LatentSeed>> {
        match self.mode {
            WalkMode::FirstCoord => seed_sequence_first_coord(self.a, self.b, self.steps, self.latent_dim()),
            WalkMode::Lerp | WalkMode::LabelLerp => lerp_seeds(&self.z_start, &self.z_end, self.steps),
        }
    }

    pub fn mixes(&self) -> Vec<ClassMix> {
        self.fractions()
            .into_iter()
            .map(|t| match self.mode {
                WalkMode::LabelLerp => ClassMix::blend(self.label_start, self.label_end, t),
                _ => ClassMix::one_hot(self.label_start),
            })
            .collect()
    }
}

/// Walk settings as they appear in run configs and on the command line;
/// the two lerp endpoints are drawn from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub mode: WalkMode,
    pub steps: usize,
    pub a: f64,
    pub b: f64,
    pub from_class: ClassLabel,
    pub to_class: ClassLabel,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            mode: WalkMode::FirstCoord,
            steps: 10,
            a: 1.0,
            b: 10.0,
            from_class: ClassLabel::Lung,
            to_class: ClassLabel::Lymphoma,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        check_steps(self.steps)?;
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::Config("walk endpoints must be finite".into()));
        }
        Ok(())
    }

    pub fn to_spec(&self, dim: usize) -> Result<WalkSpec> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let z_start = LatentSeed::sample(&mut rng, dim);
        let z_end = LatentSeed::sample(&mut rng, dim);
        Ok(WalkSpec {
            mode: self.mode,
            z_start,
            z_end,
            a: self.a,
            b: self.b,
            steps: self.steps,
            label_start: self.from_class,
            label_end: self.to_class,
        })
    }
}

impl Default for WalkSpec {
    fn default() -> Self {
        WalkConfig::default().to_spec(LATENT_DIM).expect("default walk is valid")
    }
}

/// Images in [0, 1] plus, when the renderer has a critic, realism scores.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub images: Vec<Image2D>,
    pub realism: Option<Vec<f64>>,
}

/// Anything that maps (seed, condition) to an image.
pub trait WalkRenderer {
    fn canvas(&self) -> Canvas;
    fn latent_dim(&self) -> usize;
    fn render(&self, seeds: &[LatentSeed], mixes: &[ClassMix]) -> Result<Rendered>;
}

/// Eval-mode generator, scored by the discriminator under the same
/// condition. Each sample is generated on its own.
pub struct GanRenderer<'a> {
    pub params: &'a ModelParams<f32>,
}

impl WalkRenderer for GanRenderer<'_> {
    fn canvas(&self) -> Canvas {
        self.params.canvas()
    }

    fn latent_dim(&self) -> usize {
        self.params.config().latent_dim
    }

    fn render(&self, seeds: &[LatentSeed], mixes: &[ClassMix]) -> Result<Rendered> {
        let canvas = self.canvas();
        let mut images = Vec::with_capacity(seeds.len());
        let mut realism = Vec::with_capacity(seeds.len());
        for (seed, mix) in seeds.iter().zip(mixes) {
            let raw = self.params.generator.generate(std::slice::from_ref(seed), std::slice::from_ref(mix))?;
            let score = self
                .params
                .discriminator
                .score(&image_batch(&[raw[0].as_slice()], canvas), std::slice::from_ref(mix))?;
            realism.push(score[0] as f64);
            let pixels = raw[0].iter().map(|&v| pixel_unscale(v)).collect();
            images.push(Image2D::new(canvas.height, canvas.width, pixels)?);
        }
        Ok(Rendered {
            images,
            realism: Some(realism),
        })
    }
}

/// A generator that has only memorised two images: it returns their pixel
/// blend at the seed's position along the `start → end` segment.
pub struct BlendMemorizer {
    pub start: (LatentSeed, Image2D),
    pub end: (LatentSeed, Image2D),
}

impl BlendMemorizer {
    fn position(&self, z: &LatentSeed) -> f64 {
        let (a, b) = (self.start.0.as_slice(), self.end.0.as_slice());
        let (mut num, mut den) = (0.0, 0.0);
        for ((&zi, &ai), &bi) in z.as_slice().iter().zip(a).zip(b) {
            num += (zi - ai) * (bi - ai);
            den += (bi - ai) * (bi - ai);
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).clamp(0.0, 1.0)
        }
    }
}

impl WalkRenderer for BlendMemorizer {
    fn canvas(&self) -> Canvas {
        Canvas::new(self.start.1.height, self.start.1.width)
    }

    fn latent_dim(&self) -> usize {
        self.start.0.len()
    }

    fn render(&self, seeds: &[LatentSeed], _mixes: &[ClassMix]) -> Result<Rendered> {
        let images = seeds
            .iter()
            .map(|z| {
                let t = self.position(z);
                let pixels = self
                    .start
                    .1
                    .pixels
                    .iter()
                    .zip(&self.end.1.pixels)
                    .map(|(&p, &q)| ((1.0 - t) * p as f64 + t * q as f64) as f32)
                    .collect();
                Image2D::new(self.start.1.height, self.start.1.width, pixels)
            })
            .collect::<Result<_>>()?;
        Ok(Rendered { images, realism: None })
    }
}

#[derive(Debug, Clone)]
pub struct WalkReport {
    pub fractions: Vec<f64>,
    pub images: Vec<Image2D>,
    pub realism: Option<Vec<f64>>,
    pub blend_deviation: Vec<f64>,
    pub nn_distance: Option<Vec<f64>>,
}

impl WalkReport {
    pub const CSV_HEADER: &'static str = "step,t,realism,blend_deviation,nn_distance";

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Missing metrics are left blank.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let opt = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
        for k in 0..self.len() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{}",
                self.fractions[k],
                opt(&self.realism, k),
                self.blend_deviation[k],
                opt(&self.nn_distance, k)
            );
        }
        out
    }

    pub fn strip(&self) -> Result<Image2D> {
        crate::io::hstack(&self.images)
    }
}

/// `mean |I_k - ((1 - t_k) I_0 + t_k I_{n-1})|` per step; zero at both ends.
pub fn blend_deviation(images: &[Image2D], fractions: &[f64]) -> Result<Vec<f64>> {
    if images.len() < 2 || images.len() != fractions.len() {
        return Err(Error::Shape(format!(
            "blend deviation needs at least 2 images with one fraction each, got {} and {}",
            images.len(),
            fractions.len()
        )));
    }
    let (first, last) = (&images[0], &images[images.len() - 1]);
    images
        .iter()
        .zip(fractions)
        .map(|(img, &t)| {
            if img.pixels.len() != first.pixels.len() {
                return Err(Error::Shape("walk images differ in size".into()));
            }
            let sum: f64 = img
                .pixels
                .iter()
                .zip(&first.pixels)
                .zip(&last.pixels)
                .map(|((&p, &a), &b)| (p as f64 - ((1.0 - t) * a as f64 + t * b as f64)).abs())
                .sum();
            Ok(sum / img.pixels.len() as f64)
        })
        .collect()
}

/// Mean absolute pixel distance between two equal-size images.
pub fn mean_abs_distance(a: &Image2D, b: &Image2D) -> f64 {
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&p, &q)| (p as f64 - q as f64).abs())
        .sum();
    sum / a.pixels.len() as f64
}

/// Per query image, the distance to its nearest training image.
pub fn nn_memorization_score(images: &[Image2D], training: &[Image2D]) -> Result<Vec<f64>> {
    let first = training
        .first()
        .ok_or_else(|| Error::Data("nearest-neighbour reference set is empty".into()))?;
    let shape = (first.height, first.width);
    if training
        .iter()
        .chain(images)
        .any(|i| (i.height, i.width) != shape)
    {
        return Err(Error::Shape("query and reference images must share one canvas".into()));
    }
    Ok(images
        .iter()
        .map(|q| {
            training
                .iter()
                .map(|r| mean_abs_distance(q, r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Renders the walk and attaches every metric. `reference`, when given,
/// supplies the nearest-neighbour distances.
pub fn walk(renderer: &dyn WalkRenderer, spec: &WalkSpec, reference: Option<&[Image2D]>) -> Result<WalkReport> {
    check_steps(spec.steps)?;
    if spec.latent_dim() != renderer.latent_dim() || spec.z_end.len() != renderer.latent_dim() {
        return Err(Error::CheckpointMismatch(format!(
            "walk seeds have length {} but the generator expects {}",
            spec.latent_dim(),
            renderer.latent_dim()
        )));
    }
    let canvas = renderer.canvas();
    if let Some(r) = reference.and_then(|r| r.first()) {
        if (r.height, r.width) != (canvas.height, canvas.width) {
            return Err(Error::CheckpointMismatch(format!(
                "reference images are {}x{} but the generator canvas is {}x{}",
                r.height, r.width, canvas.height, canvas.width
            )));
        }
    }
    let fractions = spec.fractions();
    let Rendered { images, realism } = renderer.render(&spec.seeds()?, &spec.mixes())?;
    let blend = blend_deviation(&images, &fractions)?;
    let nn_distance = reference.map(|r| nn_memorization_score(&images, r)).transpose()?;
    Ok(WalkReport {
        fractions,
        images,
        realism,
        blend_deviation: blend,
        nn_distance,
    })
}
