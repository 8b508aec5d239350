//! Run configuration: one JSON document with a section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{CohortOptions, RiskWeights};
use crate::eval::EvalConfig;
use crate::fusion::{TrainingConfig, Variant};
use crate::locator::LocatorConfig;
use crate::perception::RemoteConfig;
use crate::{Error, Result};

/// ROI extent used by the desk configuration, sized for 96³ phantoms at
/// 1.5 mm.
pub const DESK_ROI_EXTENT: [usize; 3] = [32, 32, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// About 3.4% of subjects are mortality-positive, so the test fold needs
    /// a few hundred subjects before its bootstrap has positives to draw.
    pub n_subjects: usize,
    pub options: CohortOptions,
    pub weights: RiskWeights,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_subjects: 1000,
            options: CohortOptions::default(),
            weights: RiskWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_spacing_mm: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { target_spacing_mm: 1.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FindingsConfig {
    /// External perception service; the rule-based detectors run when unset.
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonConfig {
    /// Knowledge base JSON; the shipped graph is used when unset.
    pub kb_path: Option<String>,
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LungRiskConfig {
    /// CSV of precomputed trajectories; the frozen surrogate runs when unset.
    pub trajectory_file: Option<String>,
    /// Replace non-monotone file rows by their running maximum.
    pub repair: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub top_k: usize,
    /// Scans to explain; the first three test scans when empty.
    pub scans: Vec<String>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { top_k: 3, scans: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed for the cohort, the split, training and bootstrap.
    pub seed: u64,
    /// Worker threads for per-scan stages; 0 lets the runtime decide.
    pub workers: usize,
    /// Manifest of existing volumes; when set the simulate stage is skipped.
    pub input_manifest: Option<String>,
    pub simulate: SimulateConfig,
    pub preprocess: PreprocessConfig,
    pub locate: LocatorConfig,
    pub findings: FindingsConfig,
    pub reason: ReasonConfig,
    pub lungrisk: LungRiskConfig,
    pub train: TrainingConfig,
    pub variant: Variant,
    pub evaluate: EvalConfig,
    pub explain: ExplainConfig,
}

/// Training settings of the desk configuration: a logistic head trained
/// with a larger step and smaller batches than the reference recipe, which
/// underfits at a few thousand scans.
pub fn desk_training() -> TrainingConfig {
    TrainingConfig {
        lr: 1e-3,
        batch_size: 16,
        hidden_width: 0,
        ..TrainingConfig::default()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            workers: 0,
            input_manifest: None,
            simulate: SimulateConfig::default(),
            preprocess: PreprocessConfig::default(),
            locate: LocatorConfig { roi_extent: DESK_ROI_EXTENT },
            findings: FindingsConfig::default(),
            reason: ReasonConfig::default(),
            lungrisk: LungRiskConfig::default(),
            train: desk_training(),
            variant: Variant::default(),
            evaluate: EvalConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.preprocess.target_spacing_mm > 0.0) {
            return Err(Error::Config("preprocess.target_spacing_mm must be positive".into()));
        }
        if self.locate.roi_extent.contains(&0) {
            return Err(Error::Config("locate.roi_extent must be positive".into()));
        }
        if self.evaluate.resamples == 0 {
            return Err(Error::Config("evaluate.resamples must be positive".into()));
        }
        self.train.validate()
    }

    /// Training settings with the master seed applied.
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn evaluation(&self) -> EvalConfig {
        EvalConfig { seed: self.seed, ..self.evaluate.clone() }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
