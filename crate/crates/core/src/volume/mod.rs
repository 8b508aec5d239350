//! CT volumes in Hounsfield units and their standardization.
//!
//! Voxels are stored in a flat `Vec<f32>` with axis 0 varying fastest:
//! the voxel at `(i, j, k)` lives at `i + H * (j + W * k)` for dims
//! `[H, W, D]`. Axis 2 is the craniocaudal axis, so an axial slice is a fixed
//! `k`. Every index computation in the crate follows this order.

mod io;
mod ops;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_volume, save_volume, VolumeFormat};
pub use ops::{clip_hu, crop_roi, normalize_intensity, resample_isotropic};

/// Lower bound of the HU clipping window.
pub const HU_MIN: f32 = -1000.0;
/// Upper bound of the HU clipping window.
pub const HU_MAX: f32 = 1000.0;
/// Minimum extent per axis of a scan read from disk.
pub const MIN_SCAN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityState {
    RawHu,
    ClippedHu,
    Normalized,
}

impl IntensityState {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityState::RawHu => "raw_hu",
            IntensityState::ClippedHu => "clipped_hu",
            IntensityState::Normalized => "normalized",
        }
    }
}

/// A dense 3D scalar grid with voxel spacing and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<f32>,
    state: IntensityState,
    subject_id: String,
    scan_id: String,
}

impl CtVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        voxels: Vec<f32>,
        state: IntensityState,
        subject_id: impl Into<String>,
        scan_id: impl Into<String>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("zero extent in dims {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if voxels.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                actual: voxels.len(),
            });
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-positive spacing {spacing:?}"
            )));
        }
        let v = CtVolume {
            dims,
            spacing,
            voxels,
            state,
            subject_id: subject_id.into(),
            scan_id: scan_id.into(),
        };
        v.check_range()?;
        Ok(v)
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        state: IntensityState,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f(i, j, k));
                }
            }
        }
        CtVolume::new(dims, spacing, voxels, state, "", "")
    }

    fn check_range(&self) -> Result<()> {
        let (lo, hi) = match self.state {
            IntensityState::RawHu => return self.check_finite(),
            IntensityState::ClippedHu => (HU_MIN, HU_MAX),
            IntensityState::Normalized => (0.0, 1.0),
        };
        if let Some(bad) = self.voxels.iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::InvalidVolume(format!(
                "voxel {bad} outside [{lo}, {hi}] for state {}",
                self.state.as_str()
            )));
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite voxel".into()));
        }
        Ok(())
    }

    pub fn with_ids(mut self, subject_id: impl Into<String>, scan_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self.scan_id = scan_id.into();
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn intensity_state(&self) -> IntensityState {
        self.state
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[self.index(i, j, k)]
    }

    pub(crate) fn replace_voxels(&self, voxels: Vec<f32>, state: IntensityState) -> Result<Self> {
        CtVolume::new(
            self.dims,
            self.spacing,
            voxels,
            state,
            self.subject_id.clone(),
            self.scan_id.clone(),
        )
    }
}

/// Axis-aligned box in voxel coordinates of a source volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl RoiBox {
    pub fn new(origin: [usize; 3], extent: [usize; 3]) -> Self {
        RoiBox { origin, extent }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        RoiBox {
            origin: [0; 3],
            extent: dims,
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.extent[a] == 0 || self.origin[a] + self.extent[a] > dims[a] {
                return Err(Error::InvalidArgument(format!(
                    "ROI origin {:?} extent {:?} out of bounds for dims {:?}",
                    self.origin, self.extent, dims
                )));
            }
        }
        Ok(())
    }

    /// Center of the box in voxel coordinates of the source volume.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] as f64 + (self.extent[a] as f64 - 1.0) / 2.0)
    }

    pub fn voxel_count(&self) -> usize {
        self.extent.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_order_is_axis0_fastest() {
        let v = CtVolume::from_fn([3, 4, 5], [1.0; 3], IntensityState::RawHu, |i, j, k| {
            (i + 10 * j + 100 * k) as f32
        })
        .unwrap();
        assert_eq!(v.voxels()[1], 1.0);
        assert_eq!(v.voxels()[3], 10.0);
        assert_eq!(v.voxels()[12], 100.0);
        assert_eq!(v.coords(v.index(2, 3, 4)), [2, 3, 4]);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            CtVolume::new([2, 2, 2], [1.0; 3], vec![0.0; 7], IntensityState::RawHu, "", ""),
            Err(Error::DimMismatch { expected: 8, actual: 7 })
        ));
        assert!(CtVolume::new([2, 2, 2], [1.0, 0.0, 1.0], vec![0.0; 8], IntensityState::RawHu, "", "").is_err());
        assert!(CtVolume::new([2, 2, 2], [1.0; 3], vec![2000.0; 8], IntensityState::ClippedHu, "", "").is_err());
        assert!(CtVolume::new([2, 2, 2], [1.0; 3], vec![1.5; 8], IntensityState::Normalized, "", "").is_err());
    }

    #[test]
    fn roi_validation() {
        assert!(RoiBox::new([2, 2, 2], [4, 4, 4]).validate([8, 8, 8]).is_ok());
        assert!(RoiBox::new([6, 0, 0], [4, 4, 4]).validate([8, 8, 8]).is_err());
        assert!(RoiBox::new([0, 0, 0], [0, 4, 4]).validate([8, 8, 8]).is_err());
    }
}
