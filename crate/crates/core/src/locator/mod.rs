//! Heart region-of-interest localization.
//!
//! The body is the largest 6-connected component above -500 HU with axial
//! holes filled; the lungs are the two largest sub -500 HU components inside
//! it. The heart ROI is centred on the mediastinal centroid: the centre of
//! mass of body voxels lying between the two lungs' bounding boxes along
//! axis 0, within their combined axis-1 range, and inside the middle 60% of
//! their craniocaudal (axis 2) extent.

mod mask;

use serde::{Deserialize, Serialize};

pub use mask::{label_components, BoundingBox, Components, Mask};

use crate::volume::{CtVolume, IntensityState, RoiBox};
use crate::{Error, Result};

/// Air/tissue boundary used for body and lung segmentation.
pub const AIR_THRESHOLD_HU: f32 = -500.0;
/// Each lung must cover at least this fraction of the body volume.
pub const MIN_LUNG_FRACTION: f64 = 0.01;
pub const DEFAULT_ROI_EXTENT: [usize; 3] = [128, 128, 128];
pub const LOCATOR_METHOD: &str = "mediastinal-centroid-v1";

fn require_hu(v: &CtVolume) -> Result<()> {
    match v.intensity_state() {
        IntensityState::RawHu | IntensityState::ClippedHu => Ok(()),
        IntensityState::Normalized => Err(Error::IntensityState {
            expected: "raw_hu or clipped_hu",
            found: IntensityState::Normalized.as_str(),
        }),
    }
}

pub fn body_mask(v: &CtVolume) -> Result<Mask> {
    require_hu(v)?;
    let tissue = Mask::from_fn(v, |_, x| x > AIR_THRESHOLD_HU);
    let comps = label_components(&tissue);
    let Some(&largest) = comps.by_size().first() else {
        return Err(Error::NoBody);
    };
    let mut body = comps.mask_of(v.dims(), largest);
    body.fill_holes_axial();
    Ok(body)
}

/// The two lungs, ordered by increasing axis-0 centroid.
#[derive(Debug, Clone)]
pub struct LungMasks {
    pub lungs: [Mask; 2],
}

impl LungMasks {
    pub fn union(&self) -> Mask {
        let [a, b] = &self.lungs;
        Mask::from_bits(
            a.dims(),
            a.bits().iter().zip(b.bits()).map(|(x, y)| *x || *y).collect(),
        )
    }
}

pub fn lung_mask(v: &CtVolume, body: &Mask) -> Result<LungMasks> {
    require_hu(v)?;
    if body.dims() != v.dims() {
        return Err(Error::InvalidArgument("body mask dims differ from volume".into()));
    }
    let air = Mask::from_fn(v, |i, x| x < AIR_THRESHOLD_HU && body.get(i));
    let comps = label_components(&air);
    let min_size = (MIN_LUNG_FRACTION * body.count() as f64).ceil() as usize;
    let big: Vec<usize> = comps
        .by_size()
        .into_iter()
        .filter(|&c| comps.sizes[c] >= min_size.max(1))
        .collect();
    if big.len() < 2 {
        return Err(Error::LungComponents(big.len()));
    }
    let mut pair = [comps.mask_of(v.dims(), big[0]), comps.mask_of(v.dims(), big[1])];
    let cx = |m: &Mask| m.centroid().map(|c| c[0]).unwrap_or_default();
    if cx(&pair[0]) > cx(&pair[1]) {
        pair.swap(0, 1);
    }
    Ok(LungMasks { lungs: pair })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    pub roi_extent: [usize; 3],
}

impl Default for LocatorConfig {
    fn default() -> Self {
        LocatorConfig {
            roi_extent: DEFAULT_ROI_EXTENT,
        }
    }
}

/// Located heart ROI, serialized next to each scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRoi {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
    pub method: String,
    /// Mediastinal centroid before the box was fitted to the volume.
    pub center: [f64; 3],
    /// Set when the volume is smaller than the requested extent on some axis.
    pub truncated: bool,
}

impl HeartRoi {
    pub fn roi_box(&self) -> RoiBox {
        RoiBox::new(self.origin, self.extent)
    }
}

/// Centre of mass of the mediastinal region between the lungs.
pub fn mediastinal_centroid(body: &Mask, lungs: &LungMasks) -> Result<[f64; 3]> {
    let [a, b] = &lungs.lungs;
    let (Some(ba), Some(bb)) = (a.bounding_box(), b.bounding_box()) else {
        return Err(Error::LungComponents(0));
    };
    let (x_lo, x_hi) = if ba.max[0] + 1 < bb.min[0] {
        (ba.max[0] as f64 + 1.0, bb.min[0] as f64 - 1.0)
    } else {
        // Overlapping boxes along axis 0: fall back to the span between the
        // lung centroids.
        let ca = a.centroid().unwrap_or_default()[0];
        let cb = b.centroid().unwrap_or_default()[0];
        (ca.min(cb), ca.max(cb))
    };
    let y_lo = ba.min[1].min(bb.min[1]) as f64;
    let y_hi = ba.max[1].max(bb.max[1]) as f64;
    let z_min = ba.min[2].min(bb.min[2]) as f64;
    let z_max = ba.max[2].max(bb.max[2]) as f64;
    let margin = 0.2 * (z_max - z_min);
    let (z_lo, z_hi) = (z_min + margin, z_max - margin);

    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for idx in body.indices() {
        let c = body.coords(idx);
        let (x, y, z) = (c[0] as f64, c[1] as f64, c[2] as f64);
        if x >= x_lo && x <= x_hi && y >= y_lo && y <= y_hi && z >= z_lo && z <= z_hi {
            sum[0] += x;
            sum[1] += y;
            sum[2] += z;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidVolume("empty mediastinal region".into()));
    }
    Ok(sum.map(|s| s / n as f64))
}

/// Fits a box of `extent` centred on `center`, shifted to stay inside `dims`
/// and truncated where the volume is smaller than the extent.
pub fn fit_roi(center: [f64; 3], extent: [usize; 3], dims: [usize; 3]) -> (RoiBox, bool) {
    let mut truncated = false;
    let mut origin = [0usize; 3];
    let mut ext = [0usize; 3];
    for a in 0..3 {
        let e = extent[a].max(1);
        if e > dims[a] {
            truncated = true;
        }
        let e = e.min(dims[a]);
        let start = (center[a] - (e as f64 - 1.0) / 2.0).round();
        let start = start.clamp(0.0, (dims[a] - e) as f64) as usize;
        origin[a] = start;
        ext[a] = e;
    }
    (RoiBox::new(origin, ext), truncated)
}

pub fn locate_heart_roi(v: &CtVolume, config: &LocatorConfig) -> Result<HeartRoi> {
    let body = body_mask(v)?;
    let lungs = lung_mask(v, &body)?;
    locate_with_masks(v, &body, &lungs, config)
}

pub fn locate_with_masks(
    v: &CtVolume,
    body: &Mask,
    lungs: &LungMasks,
    config: &LocatorConfig,
) -> Result<HeartRoi> {
    let center = mediastinal_centroid(body, lungs)?;
    let (roi, truncated) = fit_roi(center, config.roi_extent, v.dims());
    if truncated {
        log::warn!(
            "scan {}: volume {:?} smaller than ROI extent {:?}; ROI truncated",
            v.scan_id(),
            v.dims(),
            config.roi_extent
        );
    }
    Ok(HeartRoi {
        origin: roi.origin,
        extent: roi.extent,
        method: LOCATOR_METHOD.to_string(),
        center,
        truncated,
    })
}
