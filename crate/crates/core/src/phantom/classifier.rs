//! Zone-energy oracle that reads the class back off a canvas image.
//!
//! Each lesion class has a signature zone where only its lesion lands. The
//! zones are fixed fractions of the body box, which `preprocess` places at a
//! known letterbox position for a given phantom geometry.

use crate::label::{ClassLabel, NUM_CLASSES};
use crate::pipeline::{content_box, Canvas, Image2D, Letterbox, PipelineConfig};

use super::PhantomSpec;

/// Signature zones as (z0, z1, x0, x1) fractions of the body box.
const ZONES: [(ClassLabel, &[(f64, f64, f64, f64)]); 4] = [
    (ClassLabel::Lung, &[(0.25, 0.46, 0.04, 0.40), (0.25, 0.46, 0.60, 0.96)]),
    (ClassLabel::HeadNeck, &[(0.15, 0.25, 0.36, 0.64)]),
    (ClassLabel::Oesophagus, &[(0.25, 0.46, 0.45, 0.55)]),
    (ClassLabel::Lymphoma, &[(0.58, 0.84, 0.18, 0.82)]),
];

/// Pixels below this are treated as outside the body when estimating the
/// background level.
const BODY_FLOOR: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneEnergies(pub [f64; NUM_CLASSES]);

#[derive(Debug, Clone)]
pub struct RegionClassifier {
    canvas: Canvas,
    content: Letterbox,
    /// Pixel index lists per class code; normal has none.
    zones: [Vec<usize>; NUM_CLASSES],
    /// Minimum excess energy for a lesion call.
    pub threshold: f64,
    /// Excess is measured above `background + margin`.
    pub margin: f32,
}

impl RegionClassifier {
    pub const DEFAULT_THRESHOLD: f64 = 0.004;
    pub const DEFAULT_MARGIN: f32 = 0.03;

    /// Zones for images produced by `preprocess(cfg)` from volumes of `spec`'s geometry.
    pub fn new(spec: &PhantomSpec, cfg: &PipelineConfig) -> Self {
        Self::with_content(cfg.canvas, content_box(spec.dims, spec.spacing_mm, cfg))
    }

    pub fn with_content(canvas: Canvas, content: Letterbox) -> Self {
        let mut zones: [Vec<usize>; NUM_CLASSES] = Default::default();
        for (label, rects) in ZONES {
            let pixels = &mut zones[label.code()];
            for &(z0, z1, x0, x1) in rects {
                let rows = span(content.top, content.height, z0, z1);
                let cols = span(content.left, content.width, x0, x1);
                for r in rows.clone() {
                    pixels.extend(cols.clone().map(|c| r * canvas.width + c));
                }
            }
        }
        RegionClassifier {
            canvas,
            content,
            zones,
            threshold: Self::DEFAULT_THRESHOLD,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    /// Median of body pixels inside the content box.
    pub fn background(&self, image: &Image2D) -> f32 {
        let lb = self.content;
        let mut body: Vec<f32> = (lb.top..lb.top + lb.height)
            .flat_map(|r| (lb.left..lb.left + lb.width).map(move |c| (r, c)))
            .map(|(r, c)| image.get(r, c))
            .filter(|&p| p > BODY_FLOOR)
            .collect();
        if body.is_empty() {
            return 0.0;
        }
        let mid = body.len() / 2;
        *body.select_nth_unstable_by(mid, f32::total_cmp).1
    }

    /// Mean intensity above `background + margin` in each signature zone.
    pub fn energies(&self, image: &Image2D) -> ZoneEnergies {
        assert_eq!(
            (image.height, image.width),
            (self.canvas.height, self.canvas.width),
            "classifier canvas mismatch"
        );
        let level = self.background(image) + self.margin;
        let mut out = [0.0; NUM_CLASSES];
        for (e, zone) in out.iter_mut().zip(&self.zones) {
            if zone.is_empty() {
                continue;
            }
            let excess: f64 = zone
                .iter()
                .map(|&i| f64::from((image.pixels[i] - level).max(0.0)))
                .sum();
            *e = excess / zone.len() as f64;
        }
        ZoneEnergies(out)
    }

    pub fn classify(&self, image: &Image2D) -> ClassLabel {
        let ZoneEnergies(e) = self.energies(image);
        let (best, energy) = e
            .iter()
            .enumerate()
            .skip(1)
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if energy < self.threshold {
            ClassLabel::Normal
        } else {
            ClassLabel::ALL[best]
        }
    }
}

fn span(offset: usize, len: usize, f0: f64, f1: f64) -> std::ops::Range<usize> {
    let a = (f0 * len as f64).floor() as usize;
    let b = ((f1 * len as f64).ceil() as usize).min(len);
    offset + a..offset + b.max(a + 1)
}

/// Classifies with zones laid out for the default phantom geometry on `cfg`'s canvas.
pub fn region_energy_classifier(image: &Image2D, cfg: &PipelineConfig) -> ClassLabel {
    RegionClassifier::new(&PhantomSpec::default(), cfg).classify(image)
}
