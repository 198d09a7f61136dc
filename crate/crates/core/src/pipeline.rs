//! Volume preprocessing: isotropic nearest-neighbour resampling, SUV
//! windowing, maximum intensity projection and letterboxing onto the
//! network canvas.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::phantom::Volume3D;

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} with {} pixels",
                pixels.len()
            )));
        }
        Ok(Image2D {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image2D {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Canvas-sized MIP with its class label, pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MipImage {
    pub image: Image2D,
    pub label: ClassLabel,
    pub source_id: String,
}

/// Volume axis, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Z,
    Y,
    X,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(Axis::Z),
            "y" => Ok(Axis::Y),
            "x" => Ok(Axis::X),
            other => Err(Error::Config(format!("unknown axis `{other}` (expected y or x)"))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Z => "z",
            Axis::Y => "y",
            Axis::X => "x",
        })
    }
}

/// Network input size (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub height: usize,
    pub width: usize,
}

impl Canvas {
    pub const DEFAULT: Canvas = Canvas {
        height: 160,
        width: 96,
    };

    pub fn new(height: usize, width: usize) -> Self {
        Canvas { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub target_spacing_mm: f64,
    pub suv_max: f64,
    pub projection_axis: Axis,
    pub canvas: Canvas,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_spacing_mm: 2.0,
            suv_max: 30.0,
            projection_axis: Axis::Y,
            canvas: Canvas::DEFAULT,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing_mm.is_finite() && self.target_spacing_mm > 0.0) {
            return Err(Error::Config(format!(
                "target spacing must be positive, got {}",
                self.target_spacing_mm
            )));
        }
        if !(self.suv_max.is_finite() && self.suv_max > 0.0) {
            return Err(Error::Config(format!("suv_max must be positive, got {}", self.suv_max)));
        }
        if self.projection_axis == Axis::Z {
            return Err(Error::Config("projection over z is not supported".into()));
        }
        if self.canvas.height == 0 || self.canvas.width == 0 {
            return Err(Error::Config("canvas must be nonempty".into()));
        }
        Ok(())
    }
}

/// Output size along one axis after resampling to `target` mm.
pub fn resampled_len(len: usize, spacing: f64, target: f64) -> usize {
    ((len as f64 * spacing / target).round() as usize).max(1)
}

/// Nearest input index for output voxel `o`; exact ties go to the lower index.
#[inline]
fn nearest_source(o: usize, target: f64, spacing: f64, len: usize) -> usize {
    let x = (o as f64 + 0.5) * target / spacing - 0.5;
    let i = (x - 0.5).ceil();
    (i.max(0.0) as usize).min(len - 1)
}

/// Resamples onto an isotropic grid, copying the value of the voxel whose
/// centre is nearest each output centre.
pub fn resample_nearest(v: &Volume3D, target_spacing_mm: f64) -> Result<Volume3D> {
    if !(target_spacing_mm.is_finite() && target_spacing_mm > 0.0) {
        return Err(Error::Config(format!(
            "target spacing must be positive, got {target_spacing_mm}"
        )));
    }
    let dims = v.dims();
    let spacing = v.spacing_mm();
    let out_dims = [0, 1, 2].map(|a| resampled_len(dims[a], spacing[a], target_spacing_mm));
    let lookup: [Vec<usize>; 3] = [0, 1, 2].map(|a| {
        (0..out_dims[a])
            .map(|o| nearest_source(o, target_spacing_mm, spacing[a], dims[a]))
            .collect()
    });

    let src = v.voxels();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &z in &lookup[0] {
        for &y in &lookup[1] {
            let row = (z * dims[1] + y) * dims[2];
            out.extend(lookup[2].iter().map(|&x| src[row + x]));
        }
    }
    Volume3D::new(out_dims, [target_spacing_mm; 3], out)
}

/// `clamp(v, 0, suv_max) / suv_max`.
pub fn normalize_suv(v: &Volume3D, suv_max: f64) -> Result<Volume3D> {
    if !(suv_max.is_finite() && suv_max > 0.0) {
        return Err(Error::Config(format!("suv_max must be positive, got {suv_max}")));
    }
    let mut out = v.clone();
    for x in out.voxels_mut() {
        *x = normalize_value(*x, suv_max);
    }
    Ok(out)
}

#[inline]
pub fn normalize_value(x: f32, suv_max: f64) -> f32 {
    (f64::from(x).clamp(0.0, suv_max) / suv_max) as f32
}

/// Maximum intensity projection along `axis`. The result keeps z as rows so
/// the body stays upright; columns are the remaining in-plane axis.
pub fn mip_project(v: &Volume3D, axis: Axis) -> Result<Image2D> {
    let [nz, ny, nx] = v.dims();
    let src = v.voxels();
    match axis {
        Axis::Z => Err(Error::Config(
            "projection over z would collapse the body axis; use y or x".into(),
        )),
        Axis::Y => {
            let mut out = vec![f32::NEG_INFINITY; nz * nx];
            for z in 0..nz {
                let dst = &mut out[z * nx..(z + 1) * nx];
                for y in 0..ny {
                    let row = &src[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                    for (d, &s) in dst.iter_mut().zip(row) {
                        *d = d.max(s);
                    }
                }
            }
            Image2D::new(nz, nx, out)
        }
        Axis::X => {
            let out = src
                .chunks_exact(nx)
                .map(|row| row.iter().copied().fold(f32::NEG_INFINITY, f32::max))
                .collect();
            Image2D::new(nz, ny, out)
        }
    }
}

/// Placement of a rescaled image inside the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Uniform scale `min(H/h, W/w)`, centred, with zero padding around it.
pub fn letterbox(height: usize, width: usize, canvas: Canvas) -> Letterbox {
    let scale = (canvas.height as f64 / height as f64).min(canvas.width as f64 / width as f64);
    let h = ((height as f64 * scale).round() as usize).clamp(1, canvas.height);
    let w = ((width as f64 * scale).round() as usize).clamp(1, canvas.width);
    Letterbox {
        top: (canvas.height - h) / 2,
        left: (canvas.width - w) / 2,
        height: h,
        width: w,
    }
}

/// Bilinear rescale into the letterbox; pixel centres are aligned, not corners.
pub fn fit_to_canvas(img: &Image2D, canvas: Canvas) -> Result<Image2D> {
    if img.pixels.is_empty() {
        return Err(Error::Shape("cannot fit an empty image".into()));
    }
    let lb = letterbox(img.height, img.width, canvas);
    let ry = img.height as f64 / lb.height as f64;
    let rx = img.width as f64 / lb.width as f64;
    let taps = |o: usize, ratio: f64, len: usize| {
        let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let cols: Vec<_> = (0..lb.width).map(|c| taps(c, rx, img.width)).collect();

    let mut out = Image2D::zeros(canvas.height, canvas.width);
    for r in 0..lb.height {
        let (y0, y1, fy) = taps(r, ry, img.height);
        let dst = &mut out.pixels[(lb.top + r) * canvas.width + lb.left..][..lb.width];
        for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&cols) {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            *d = top * (1.0 - fy) + bottom * fy;
        }
    }
    Ok(out)
}

/// Resample, window, project and letterbox one volume.
pub fn preprocess(v: &Volume3D, label: ClassLabel, source_id: &str, cfg: &PipelineConfig) -> Result<MipImage> {
    cfg.validate()?;
    let iso = resample_nearest(v, cfg.target_spacing_mm)?;
    let windowed = normalize_suv(&iso, cfg.suv_max)?;
    let mip = mip_project(&windowed, cfg.projection_axis)?;
    let mut image = fit_to_canvas(&mip, cfg.canvas)?;
    for p in &mut image.pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(MipImage {
        image,
        label,
        source_id: source_id.to_string(),
    })
}

/// Letterbox that `preprocess` produces for volumes of this size and spacing.
pub fn content_box(dims: [usize; 3], spacing_mm: [f64; 3], cfg: &PipelineConfig) -> Letterbox {
    let t = cfg.target_spacing_mm;
    let rows = resampled_len(dims[0], spacing_mm[0], t);
    let cols = match cfg.projection_axis {
        Axis::X => resampled_len(dims[1], spacing_mm[1], t),
        _ => resampled_len(dims[2], spacing_mm[2], t),
    };
    letterbox(rows, cols, cfg.canvas)
}

/// Generates and preprocesses a whole phantom corpus, in manifest order.
pub fn preprocess_corpus(spec: &crate::phantom::PhantomSpec, cfg: &PipelineConfig) -> Result<Vec<MipImage>> {
    cfg.validate()?;
    crate::phantom::iter_corpus(spec)?
        .map(|item| preprocess(&item.volume, item.label, &item.id, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom_volume, PhantomSpec};

    fn ramp(dims: [usize; 3], spacing: [f64; 3]) -> Volume3D {
        let n = dims.iter().product::<usize>();
        Volume3D::new(dims, spacing, (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn identity_resample() {
        let v = ramp([3, 4, 5], [2.0; 3]);
        assert_eq!(resample_nearest(&v, 2.0).unwrap(), v);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume3D::filled([4, 3, 5], [4.06, 4.06, 2.0], 3.25).unwrap();
        for t in [0.7, 1.0, 2.0, 3.3, 9.0] {
            let r = resample_nearest(&v, t).unwrap();
            assert!(r.voxels().iter().all(|&x| x == 3.25));
        }
    }

    #[test]
    fn resample_dims_and_ties() {
        let v = ramp([5, 4, 3], [4.06, 4.06, 2.0]);
        let r = resample_nearest(&v, 2.0).unwrap();
        assert_eq!(r.dims(), [10, 8, 3]);
        assert_eq!(r.spacing_mm(), [2.0; 3]);
        // output centre at 3 mm is equidistant from input centres 1.5 and 4.5 mm
        let w = ramp([2, 1, 1], [3.0, 1.0, 1.0]);
        let r = resample_nearest(&w, 2.0).unwrap();
        assert_eq!(r.dims(), [3, 1, 1]);
        assert_eq!(r.voxels(), &[0.0, 0.0, 1.0]);
        assert!(resample_nearest(&w, 0.0).is_err());
        assert!(resample_nearest(&w, -1.0).is_err());
        // tiny axis never collapses to zero
        let thin = ramp([1, 1, 1], [0.1, 0.1, 0.1]);
        assert_eq!(resample_nearest(&thin, 2.0).unwrap().dims(), [1, 1, 1]);
    }

    #[test]
    fn normalize_examples() {
        let v = Volume3D::new([1, 1, 5], [1.0; 3], vec![30.0, 0.0, 45.0, 15.0, -3.0]).unwrap();
        let n = normalize_suv(&v, 30.0).unwrap();
        assert_eq!(n.voxels(), &[1.0, 0.0, 1.0, 0.5, 0.0]);
        assert!(normalize_suv(&v, 0.0).is_err());
        assert!(normalize_suv(&v, -30.0).is_err());
    }

    #[test]
    fn mip_one_hot_and_zero() {
        let mut v = Volume3D::filled([4, 3, 5], [1.0; 3], 0.0).unwrap();
        let zero = mip_project(&v, Axis::Y).unwrap();
        assert!(zero.pixels.iter().all(|&p| p == 0.0));
        v.set(2, 1, 3, 1.0);
        let img = mip_project(&v, Axis::X).unwrap();
        assert_eq!((img.height, img.width), (4, 3));
        let nonzero: Vec<_> = (0..4)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .filter(|&(r, c)| img.get(r, c) != 0.0)
            .collect();
        assert_eq!(nonzero, vec![(2, 1)]);
        let img = mip_project(&v, Axis::Y).unwrap();
        assert_eq!((img.height, img.width), (4, 5));
        assert_eq!(img.get(2, 3), 1.0);
        assert!(mip_project(&v, Axis::Z).is_err());
    }

    #[test]
    fn fit_identity_and_halving() {
        let canvas = Canvas::DEFAULT;
        let pixels: Vec<f32> = (0..160 * 96).map(|i| (i % 97) as f32 / 97.0).collect();
        let img = Image2D::new(160, 96, pixels.clone()).unwrap();
        assert_eq!(fit_to_canvas(&img, canvas).unwrap().pixels, pixels);

        let big: Vec<f32> = (0..320 * 192).map(|i| ((i * 7) % 13) as f32 / 13.0).collect();
        let big = Image2D::new(320, 192, big).unwrap();
        let out = fit_to_canvas(&big, canvas).unwrap();
        assert_eq!(letterbox(320, 192, canvas), Letterbox { top: 0, left: 0, height: 160, width: 96 });
        for r in 0..160 {
            for c in 0..96 {
                let expect = (big.get(2 * r, 2 * c) + big.get(2 * r, 2 * c + 1) + big.get(2 * r + 1, 2 * c) + big.get(2 * r + 1, 2 * c + 1)) / 4.0;
                assert!((out.get(r, c) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fit_full_scale_min_rule() {
        let canvas = Canvas::DEFAULT;
        let (h, w) = (429usize, 341usize);
        let by_height = 160.0 / h as f64;
        let by_width = 96.0 / w as f64;
        assert!(by_width < by_height);
        let expected_h = (h as f64 * by_width).round() as usize;
        let lb = letterbox(h, w, canvas);
        assert_eq!((lb.height, lb.width), (expected_h, 96));
        assert!(((w as f64 * by_height).round() as usize) > 96);

        let img = Image2D::new(h, w, vec![1.0; h * w]).unwrap();
        let out = fit_to_canvas(&img, canvas).unwrap();
        for r in 0..160 {
            for c in 0..96 {
                let inside = r >= lb.top && r < lb.top + lb.height;
                assert_eq!(out.get(r, c), if inside { 1.0 } else { 0.0 }, "({r},{c})");
            }
        }
        assert!(lb.top > 0);
    }

    #[test]
    fn preprocess_phantom_range() {
        let spec = PhantomSpec::default();
        let v = make_phantom_volume(ClassLabel::Normal, 1, &spec).unwrap();
        let m = preprocess(&v, ClassLabel::Normal, "n1", &PipelineConfig::default()).unwrap();
        assert_eq!((m.image.height, m.image.width), (160, 96));
        assert!(m.image.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(m.image.pixels.iter().any(|&p| p > 0.1));
        let lb = content_box(spec.dims, spec.spacing_mm, &PipelineConfig::default());
        assert_eq!(lb, Letterbox { top: 16, left: 0, height: 128, width: 96 });
    }

    #[test]
    fn normalize_commutes_with_mip() {
        let v = make_phantom_volume(ClassLabel::Lymphoma, 5, &PhantomSpec::default()).unwrap();
        let a = mip_project(&normalize_suv(&v, 30.0).unwrap(), Axis::Y).unwrap();
        let mut b = mip_project(&v, Axis::Y).unwrap();
        for p in &mut b.pixels {
            *p = normalize_value(*p, 30.0);
        }
        assert_eq!(a, b);
    }
}
