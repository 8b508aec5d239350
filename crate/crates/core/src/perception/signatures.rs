//! Rule-based finding detectors.
//!
//! Each finding has one signature statistic measured inside the lungs:
//!
//! | finding            | statistic                                                      |
//! |--------------------|----------------------------------------------------------------|
//! | emphysema          | fraction of lung voxels below -950 HU                          |
//! | pleural effusion   | attenuation drop of the layer just posterior to each lung      |
//! | fibrosis           | fraction of the 2-voxel lung rim above -750 HU                 |
//! | opacity            | share of the lung field in dense (> -500 HU) blobs of > 100 voxels |
//! | nodule             | number of dense compact blobs of 5 to 100 voxels               |
//!
//! The lung field is the lung mask with axial holes filled, so dense lesions
//! enclosed by aerated lung count as inside it. Statistics map to scores by
//! the frozen logistic calibration in [`super::calibration`].

use serde::{Deserialize, Serialize};

use super::calibration::PerceptionCalibration;
use super::{filter_findings, Finding, FindingSet, FindingSource, ScoredFinding};
use crate::locator::{label_components, LungMasks, Mask};
use crate::volume::{CtVolume, IntensityState};
use crate::{Error, Result};

pub const LOW_ATTENUATION_HU: f32 = -950.0;
pub const RETICULAR_HU: f32 = -750.0;
pub const DENSE_HU: f32 = -500.0;
/// Depth of the posterior layer inspected for effusion.
pub const EFFUSION_WINDOW_MM: f64 = 9.0;
/// Reference attenuation of chest-wall soft tissue and of pleural fluid.
pub const SOFT_TISSUE_REF_HU: f64 = 40.0;
pub const FLUID_REF_HU: f64 = 10.0;
pub const OPACITY_MIN_BLOB: usize = 101;
pub const NODULE_BLOB_RANGE: (usize, usize) = (5, 100);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureStats {
    pub opacity: f64,
    pub pleural_effusion: f64,
    pub fibrosis: f64,
    pub emphysema: f64,
    pub nodule: f64,
}

impl SignatureStats {
    pub fn get(&self, f: Finding) -> f64 {
        match f {
            Finding::Opacity => self.opacity,
            Finding::PleuralEffusion => self.pleural_effusion,
            Finding::Fibrosis => self.fibrosis,
            Finding::Emphysema => self.emphysema,
            Finding::Nodule => self.nodule,
        }
    }
}

pub fn signature_statistics(v: &CtVolume, lungs: &LungMasks) -> Result<SignatureStats> {
    if v.intensity_state() == IntensityState::Normalized {
        return Err(Error::IntensityState {
            expected: "raw_hu or clipped_hu",
            found: IntensityState::Normalized.as_str(),
        });
    }
    if lungs.lungs.iter().any(|m| m.dims() != v.dims() || m.count() == 0) {
        return Err(Error::InvalidArgument("missing or mismatched lung masks".into()));
    }
    let hu = v.voxels();
    let lung = lungs.union();
    let lung_n = lung.count() as f64;

    let emphysema = lung.indices().filter(|&i| hu[i] < LOW_ATTENUATION_HU).count() as f64 / lung_n;

    let rim = lung.and_not(&lung.eroded().eroded());
    let rim_n = rim.count().max(1) as f64;
    let fibrosis = rim.indices().filter(|&i| hu[i] > RETICULAR_HU).count() as f64 / rim_n;

    let mut field = lung.clone();
    field.fill_holes_axial();
    let dense = Mask::from_bits(
        v.dims(),
        (0..hu.len()).map(|i| field.get(i) && !lung.get(i) && hu[i] > DENSE_HU).collect(),
    );
    let comps = label_components(&dense);
    let opaque: usize = comps.sizes.iter().filter(|&&s| s >= OPACITY_MIN_BLOB).sum();
    let opacity = opaque as f64 / field.count() as f64;
    let (lo, hi) = NODULE_BLOB_RANGE;
    let nodule = comps.sizes.iter().filter(|&&s| (lo..=hi).contains(&s)).count() as f64;

    let pleural_effusion = effusion_statistic(v, &lung);

    Ok(SignatureStats {
        opacity,
        pleural_effusion,
        fibrosis,
        emphysema,
        nodule,
    })
}

/// Mean attenuation drop, relative to soft tissue, over the layer directly
/// posterior (+axis 1) to the lungs: 0 for plain chest wall, 1 for a fluid
/// layer filling the whole window.
fn effusion_statistic(v: &CtVolume, lung: &Mask) -> f64 {
    let [h, w, d] = v.dims();
    let window = (EFFUSION_WINDOW_MM / v.spacing()[1] as f64).round().max(1.0) as usize;
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..d {
        for i in 0..h {
            let Some(last) = (0..w).rev().find(|&j| lung.get(v.index(i, j, k))) else {
                continue;
            };
            for j in last + 1..(last + 1 + window).min(w) {
                sum += v.get(i, j, k) as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    (SOFT_TISSUE_REF_HU - sum / n as f64) / (SOFT_TISSUE_REF_HU - FLUID_REF_HU)
}

/// Scores the five findings with the shipped calibration.
pub fn score_findings(v: &CtVolume, lungs: &LungMasks) -> Result<FindingSet> {
    score_findings_with(v, lungs, &PerceptionCalibration::shipped())
}

pub fn score_findings_with(
    v: &CtVolume,
    lungs: &LungMasks,
    calibration: &PerceptionCalibration,
) -> Result<FindingSet> {
    let stats = signature_statistics(v, lungs)?;
    let raw: Vec<ScoredFinding> = Finding::ALL
        .iter()
        .map(|&f| ScoredFinding {
            name: f,
            score: calibration.score(f, stats.get(f)),
        })
        .collect();
    filter_findings(&raw, FindingSource::RuleBased)
}
