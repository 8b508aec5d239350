//! Synthetic cohorts with a known ground-truth risk model.
//!
//! Each subject gets a [`PhantomSpec`] with sampled pathology severities,
//! calcification burden and pericardial fat. The true risk is
//!
//! ```text
//! risk = σ(b + Σ w_f·severity_f + w_calc·burden + w_fat·fat + Σ w_m·activation_m)
//! ```
//!
//! where `activation_m` are knowledge-graph node activations computed from
//! the *true* severities, so part of the signal only becomes linear after
//! the reasoning step. Screening labels are Bernoulli(risk); mortality is
//! Bernoulli(risk × mortality_factor) among screening positives.

mod phantom;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::perception::{filter_findings, Finding, FindingSource, ScoredFinding};
use crate::reasoning::{node_activations, KnowledgeGraph};
use crate::volume::CtVolume;
use crate::{Error, Result};

pub use phantom::{
    fat_shell_voxels, generate_phantom, heart_voxels, PhantomSpec, DEFAULT_SPACING_MM,
    CALCIFIED_VOXELS_PER_BURDEN, EFFUSION_MAX_THICKNESS, FAT_SHELL_VOXELS, NOISE_SIGMA_HU,
};
pub(crate) use phantom::derive_seed;

pub const MIN_COHORT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Screening,
    Mortality,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Screening, Task::Mortality];

    pub fn name(self) -> &'static str {
        match self {
            Task::Screening => "screening",
            Task::Mortality => "mortality",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "screening" => Ok(Task::Screening),
            "mortality" => Ok(Task::Mortality),
            _ => Err(Error::InvalidArgument(format!("unknown task '{s}'"))),
        }
    }
}

/// Weights of the ground-truth risk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskWeights {
    pub bias: f64,
    pub findings: BTreeMap<Finding, f64>,
    pub calcification: f64,
    pub pericardial_fat: f64,
    /// Knowledge-graph node name → weight on its activation.
    pub mechanisms: BTreeMap<String, f64>,
    pub mortality_factor: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        let findings = [
            (Finding::Opacity, 0.6),
            (Finding::PleuralEffusion, 0.2),
            (Finding::Fibrosis, 0.6),
            (Finding::Emphysema, 0.8),
            (Finding::Nodule, 0.9),
        ];
        let mechanisms = [
            ("pulmonary_hypertension", 1.6),
            ("reduced_venous_return", 0.8),
            ("endothelial_dysfunction", 1.6),
            ("right_ventricular_strain", 1.6),
        ];
        RiskWeights {
            bias: -5.55,
            findings: findings.into_iter().collect(),
            calcification: 3.2,
            pericardial_fat: 3.0,
            mechanisms: mechanisms.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            mortality_factor: 0.37,
        }
    }
}

impl RiskWeights {
    pub fn validate(&self, kb: &KnowledgeGraph) -> Result<()> {
        let all = self
            .findings
            .values()
            .chain(self.mechanisms.values())
            .chain([&self.calcification, &self.pericardial_fat]);
        let mut any = false;
        for w in all {
            if !w.is_finite() {
                return Err(Error::InvalidArgument("non-finite risk weight".into()));
            }
            any |= *w != 0.0;
        }
        if !any {
            return Err(Error::InvalidArgument("degenerate risk weights: all zero".into()));
        }
        if let Some(m) = self.mechanisms.keys().find(|m| kb.node_index(m).is_none()) {
            return Err(Error::InvalidArgument(format!("risk weight on unknown node '{m}'")));
        }
        if !(self.mortality_factor > 0.0 && self.mortality_factor <= 1.0) {
            return Err(Error::InvalidArgument("mortality factor outside (0, 1]".into()));
        }
        Ok(())
    }

    /// Ground-truth risk for a phantom layout.
    pub fn true_risk(&self, spec: &PhantomSpec, kb: &KnowledgeGraph) -> f64 {
        let mut logit = self.bias;
        let raw: Vec<ScoredFinding> = Finding::ALL
            .iter()
            .map(|&f| ScoredFinding { name: f, score: spec.severity(f) })
            .collect();
        for s in &raw {
            logit += self.findings.get(&s.name).copied().unwrap_or(0.0) * s.score;
        }
        logit += self.calcification * spec.calcification_burden;
        logit += self.pericardial_fat * spec.pericardial_fat_fraction;
        let set = filter_findings(&raw, FindingSource::RuleBased).expect("severities validated");
        let act = node_activations(&set, kb);
        for (name, w) in &self.mechanisms {
            if let Some(i) = kb.node_index(name) {
                logit += w * act[i];
            }
        }
        // keep strictly inside (0, 1)
        (1.0 / (1.0 + (-logit).exp())).clamp(1e-12, 1.0 - 1e-12)
    }
}

/// How phantoms are laid out and how subject-level variation is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortOptions {
    pub dims: [usize; 3],
    pub spacing_mm: f32,
    pub scans_per_subject: usize,
    /// Probability that each pulmonary finding is present.
    pub finding_prevalence: f64,
    /// Uniform jitter of the heart centre, in voxels, per axis.
    pub heart_jitter: f64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            dims: [96, 96, 96],
            spacing_mm: DEFAULT_SPACING_MM,
            scans_per_subject: 1,
            finding_prevalence: 0.45,
            heart_jitter: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub subject_id: String,
    pub scan_ids: Vec<String>,
    pub true_risk: f64,
    pub label_screening: u8,
    pub label_mortality: u8,
    pub spec: PhantomSpec,
}

impl CohortRecord {
    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Screening => self.label_screening,
            Task::Mortality => self.label_mortality,
        }
    }

    /// Spec of the `scan`-th acquisition: same anatomy, its own noise seed.
    pub fn scan_spec(&self, scan: usize) -> PhantomSpec {
        let mut spec = self.spec.clone();
        if scan > 0 {
            spec.seed = derive_seed(self.spec.seed, 0x5CA7, scan as u64);
        }
        spec
    }

    pub fn scan_volume(&self, scan: usize) -> Result<CtVolume> {
        let v = generate_phantom(&self.scan_spec(scan))?;
        Ok(v.with_ids(self.subject_id.clone(), self.scan_ids[scan].clone()))
    }
}

fn draw_spec(rng: &mut ChaCha8Rng, seed: u64, options: &CohortOptions) -> PhantomSpec {
    let mut spec = PhantomSpec::standard(seed, options.dims);
    spec.spacing_mm = options.spacing_mm;
    for f in Finding::ALL {
        let present = rng.random::<f64>() < options.finding_prevalence;
        let s = if present { rng.random_range(0.05..1.0) } else { 0.0 };
        spec.pathology_levels.insert(f, s);
    }
    spec.calcification_burden = if rng.random::<f64>() < 0.5 {
        0.0
    } else {
        rng.random_range(0.0..1.0)
    };
    spec.pericardial_fat_fraction = rng.random_range(0.05..0.6);
    let j = options.heart_jitter;
    for a in 0..3 {
        if j > 0.0 {
            spec.heart_center[a] += rng.random_range(-j..j);
        }
    }
    spec
}

/// Samples `n_subjects` subjects. Every subject uses its own RNG stream
/// derived from `seed`, so results do not depend on evaluation order.
pub fn sample_cohort(
    n_subjects: usize,
    seed: u64,
    weights: &RiskWeights,
    options: &CohortOptions,
) -> Result<Vec<CohortRecord>> {
    if n_subjects < MIN_COHORT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "cohort needs at least {MIN_COHORT_SIZE} subjects, got {n_subjects}"
        )));
    }
    if options.scans_per_subject == 0 {
        return Err(Error::InvalidArgument("scans_per_subject must be positive".into()));
    }
    let kb = KnowledgeGraph::default_kb();
    weights.validate(&kb)?;
    (0..n_subjects)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0_4057, s as u64));
            let spec = draw_spec(&mut rng, derive_seed(seed, 0x9_4A47, s as u64), options);
            spec.validate()?;
            let true_risk = weights.true_risk(&spec, &kb);
            let screening = rng.random::<f64>() < true_risk;
            let mortality = screening && rng.random::<f64>() < true_risk * weights.mortality_factor;
            let subject_id = format!("sub-{s:05}");
            let scan_ids = (0..options.scans_per_subject)
                .map(|k| format!("{subject_id}_scan-{k}"))
                .collect();
            Ok(CohortRecord {
                subject_id,
                scan_ids,
                true_risk,
                label_screening: screening as u8,
                label_mortality: mortality as u8,
                spec,
            })
        })
        .collect()
}

/// AUC of the true risk against the realized labels.
pub fn bayes_optimal_auc(cohort: &[CohortRecord], task: Task) -> Result<f64> {
    let scores: Vec<f64> = cohort.iter().map(|r| r.true_risk).collect();
    let labels: Vec<u8> = cohort.iter().map(|r| r.label(task)).collect();
    crate::eval::auc(&scores, &labels)
}

/// One manifest row per scan. `oracle_true_risk` is simulator ground truth
/// and is never read back as a model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub scan_id: String,
    pub volume_path: String,
    pub label_screening: u8,
    pub label_mortality: u8,
    pub oracle_true_risk: f64,
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    for row in &rows {
        if row.label_mortality > row.label_screening || row.label_screening > 1 {
            return Err(Error::Schema(format!("inconsistent labels for {}", row.scan_id)));
        }
    }
    Ok(rows)
}
