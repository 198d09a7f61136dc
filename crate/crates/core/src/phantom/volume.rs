use crate::error::{Error, Result};

/// Voxel grid in (z, y, x) order, z-major storage, SUV-valued.
///
/// z runs head to feet, y anterior to posterior, x across the body.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        let count = dims.iter().product::<usize>();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("volume dims must be nonzero, got {dims:?}")));
        }
        if voxels.len() != count {
            return Err(Error::Shape(format!(
                "volume {dims:?} needs {count} voxels, got {}",
                voxels.len()
            )));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config(format!(
                "voxel spacing must be positive, got {spacing_mm:?}"
            )));
        }
        Ok(Volume3D {
            dims,
            spacing_mm,
            voxels,
        })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing_mm, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, value: f32) {
        let i = self.index(z, y, x);
        self.voxels[i] = value;
    }

    /// Physical extent in mm along each axis.
    pub fn extent_mm(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing_mm[a])
    }

    pub fn max_value(&self) -> f32 {
        self.voxels.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}
