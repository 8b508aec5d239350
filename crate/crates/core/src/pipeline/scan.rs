//! In-memory processing of one scan through every per-scan stage.

use rayon::prelude::*;

use crate::cardiac::{extract_cardiac_features, CardiacFeatureVector};
use crate::cohort::CohortRecord;
use crate::eval::Dataset;
use crate::fusion::ScanFeatures;
use crate::locator::{body_mask, locate_with_masks, lung_mask, HeartRoi, LocatorConfig};
use crate::lungrisk::{estimate_trajectory, RiskTrajectory, SurrogateParams};
use crate::perception::calibration::PerceptionCalibration;
use crate::perception::signatures::score_findings_with;
use crate::perception::FindingSet;
use crate::reasoning::{encode_indicators, reason, KnowledgeGraph, ReasoningTrace};
use crate::volume::{clip_hu, crop_roi, resample_isotropic, CtVolume, IntensityState};
use crate::{Error, Result};

/// Frozen components shared by every scan.
#[derive(Debug, Clone)]
pub struct ScanContext {
    pub kb: KnowledgeGraph,
    pub calibration: PerceptionCalibration,
    pub surrogate: SurrogateParams,
    pub locator: LocatorConfig,
    pub target_spacing_mm: f64,
}

impl ScanContext {
    pub fn shipped(locator: LocatorConfig, target_spacing_mm: f64) -> Self {
        ScanContext {
            kb: KnowledgeGraph::default_kb(),
            calibration: PerceptionCalibration::shipped(),
            surrogate: SurrogateParams::shipped(),
            locator,
            target_spacing_mm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanOutputs {
    pub roi: HeartRoi,
    pub findings: FindingSet,
    pub trace: ReasoningTrace,
    pub trajectory: RiskTrajectory,
    pub cardiac: CardiacFeatureVector,
    pub features: ScanFeatures,
}

/// Clips a raw volume; an already clipped one passes through unchanged.
pub fn ensure_clipped(v: CtVolume) -> Result<CtVolume> {
    match v.intensity_state() {
        IntensityState::RawHu => clip_hu(&v),
        IntensityState::ClippedHu => Ok(v),
        IntensityState::Normalized => Err(Error::IntensityState {
            expected: "raw_hu or clipped_hu",
            found: IntensityState::Normalized.as_str(),
        }),
    }
}

/// Resamples to the target spacing when needed, then clips to the HU window.
pub fn preprocess(raw: &CtVolume, target_spacing_mm: f64) -> Result<CtVolume> {
    let isotropic = raw
        .spacing()
        .iter()
        .all(|&s| (s as f64 - target_spacing_mm).abs() < 1e-6);
    if isotropic {
        ensure_clipped(raw.clone())
    } else {
        ensure_clipped(resample_isotropic(raw, target_spacing_mm)?)
    }
}

/// Runs locate, findings, reasoning, lung risk and cardiac features on a
/// preprocessed (clipped) volume.
pub fn process_preprocessed(v: &CtVolume, ctx: &ScanContext) -> Result<ScanOutputs> {
    let body = body_mask(v)?;
    let lungs = lung_mask(v, &body)?;
    let roi = locate_with_masks(v, &body, &lungs, &ctx.locator)?;
    let findings = score_findings_with(v, &lungs, &ctx.calibration)?;
    let trace = reason(&findings, &ctx.kb);
    let indicators = encode_indicators(&trace, &ctx.kb.stamp())?;
    let trajectory = estimate_trajectory(&findings, &ctx.surrogate);
    let cardiac = extract_cardiac_features(&crop_roi(v, &roi.roi_box())?)?;
    let features = ScanFeatures {
        subject_id: v.subject_id().to_string(),
        scan_id: v.scan_id().to_string(),
        cardiac: cardiac.values.to_vec(),
        finding_scores: findings.score_vector(),
        indicators,
        lung: trajectory.values,
    };
    Ok(ScanOutputs { roi, findings, trace, trajectory, cardiac, features })
}

pub fn process_volume(raw: &CtVolume, ctx: &ScanContext) -> Result<ScanOutputs> {
    process_preprocessed(&preprocess(raw, ctx.target_spacing_mm)?, ctx)
}

/// Generates and processes every scan of a simulated cohort in memory.
pub fn build_dataset(records: &[CohortRecord], ctx: &ScanContext) -> Result<Dataset> {
    let jobs: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.scan_ids.len()).map(move |s| (r, s)))
        .collect();
    let scans = jobs
        .par_iter()
        .map(|&(r, s)| {
            let v = records[r].scan_volume(s)?;
            Ok(process_volume(&v, ctx)?.features)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = records
        .iter()
        .map(|r| (r.subject_id.clone(), (r.label_screening, r.label_mortality)))
        .collect();
    Ok(Dataset { scans, labels })
}
