//! The pipeline stages and the files they exchange.
//!
//! | stage      | reads                          | writes                                   |
//! |------------|--------------------------------|------------------------------------------|
//! | simulate   | config or input manifest       | `cohort.json`, `manifest.csv`, `volumes/` |
//! | preprocess | simulate                       | `manifest.csv`, clipped `volumes/`       |
//! | locate     | preprocess                     | `rois.json`                              |
//! | findings   | preprocess                     | `findings.json`                          |
//! | reason     | findings                       | `traces.json`                            |
//! | lungrisk   | findings                       | `lungrisk.csv`                           |
//! | features   | preprocess, locate             | `cardiac_features.csv`                   |
//! | train      | features, reason, lungrisk     | `model_<task>.json`, `split.json`, log   |
//! | evaluate   | train                          | `report_<task>.{json,txt}`, ROC CSV/SVG  |
//! | ablate     | features, reason, lungrisk     | `ablation.{json,txt,csv}`, ROC SVGs      |
//! | explain    | train, locate, reason          | attribution JSON, heat NIfTI             |
//!
//! Evaluation and ablation outputs are also copied to `<run>/reports/`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{create_dir, read_json, stage_key, write_json, ManifestOfRecord, RunDir};
use super::config::{sha256_hex, PipelineConfig};
use super::scan::{ensure_clipped, preprocess, ScanContext};
use crate::cardiac::{extract_cardiac_features, read_feature_cache, write_feature_cache, CHANNEL_NAMES, D_CARD};
use crate::cohort::{read_manifest, sample_cohort, write_manifest, ManifestRow, Task};
use crate::eval::{
    evaluate_params, render_table, roc_svg, run_ablation, write_reports_csv, write_roc_csv, Dataset, EvalReport,
    Split,
};
use crate::explain::{attribute_indicators, attribute_input, has_indicator_block, project_cardiac_attribution};
use crate::explain::{AnnotatedRationale, InputAttribution};
use crate::fusion::{forward, load_params, save_params, EpochLog, ModelParams, ScanFeatures, Variant, PARAMS_FORMAT};
use crate::locator::{body_mask, locate_with_masks, lung_mask, HeartRoi, LOCATOR_METHOD};
use crate::lungrisk::{estimate_trajectory, load_trajectory_table, RiskTrajectory, TrajectorySource};
use crate::perception::signatures::score_findings_with;
use crate::perception::{fetch_findings_remote, filter_findings, FindingSet, FindingSource, ScoredFinding};
use crate::reasoning::{
    encode_indicators, fetch_reasoning_remote, load_knowledge_base, reason, KnowledgeGraph, ReasoningTrace,
};
use crate::volume::{crop_roi, load_volume, save_volume, CtVolume};
use crate::{Error, Result};

/// Scans explained when the config names none.
pub const DEFAULT_EXPLAIN_SCANS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Preprocess,
    Locate,
    Findings,
    Reason,
    LungRisk,
    Features,
    Train,
    Evaluate,
    Ablate,
    Explain,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Simulate,
        Stage::Preprocess,
        Stage::Locate,
        Stage::Findings,
        Stage::Reason,
        Stage::LungRisk,
        Stage::Features,
        Stage::Train,
        Stage::Evaluate,
        Stage::Ablate,
        Stage::Explain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Preprocess => "preprocess",
            Stage::Locate => "locate",
            Stage::Findings => "findings",
            Stage::Reason => "reason",
            Stage::LungRisk => "lungrisk",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
            Stage::Explain => "explain",
        }
    }

    /// Stages that run once per task.
    pub fn per_task(self) -> bool {
        matches!(self, Stage::Train | Stage::Evaluate | Stage::Explain)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage '{s}'")))
    }
}

/// Findings of one scan as cached by the findings stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingsRecord {
    pub source: FindingSource,
    pub findings: Vec<ScoredFinding>,
}

impl FindingsRecord {
    pub fn to_set(&self) -> Result<FindingSet> {
        filter_findings(&self.findings, self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LungRow {
    scan_id: String,
    y1: f64,
    y2: f64,
    y3: f64,
    y4: f64,
    y5: f64,
    y6: f64,
    source: TrajectorySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub task: Task,
    pub variant: Variant,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
}

/// Per-scan explanation written by the explain stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanExplanation {
    pub scan_id: String,
    pub task: Task,
    pub probability: f64,
    pub roi: HeartRoi,
    pub attribution: InputAttribution,
    /// Heat volume file name, present when the variant uses the cardiac block.
    pub heat_volume: Option<String>,
    pub rationale: Option<AnnotatedRationale>,
}

fn stage_label(stage: Stage, task: Option<Task>) -> String {
    match task {
        Some(t) if stage.per_task() => format!("{}-{}", stage.name(), t.name()),
        _ => stage.name().to_string(),
    }
}

fn remedy(stage: Stage, task: Option<Task>) -> String {
    let flag = match task {
        Some(t) if stage.per_task() => format!(" --task {}", t.name()),
        _ => String::new(),
    };
    format!(
        "run `cardiopulm {}{flag}` (or `cardiopulm run-all`) with the same config and run directory",
        stage.name()
    )
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn safe_name(scan_id: &str) -> String {
    scan_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// A configured pipeline bound to one run directory.
pub struct Pipeline {
    config: PipelineConfig,
    run: RunDir,
    ctx: ScanContext,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let mut ctx = ScanContext::shipped(config.locate, config.preprocess.target_spacing_mm);
        if let Some(path) = &config.reason.kb_path {
            ctx.kb = load_knowledge_base(path)?;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Pipeline {
            config,
            run: RunDir::new(run_dir),
            ctx,
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    pub fn kb(&self) -> &KnowledgeGraph {
        &self.ctx.kb
    }

    /// Cache key of a stage; a pure function of the config and the
    /// component versions.
    pub fn key(&self, stage: Stage, task: Option<Task>) -> Result<String> {
        let c = &self.config;
        let up = |s: Stage| self.key(s, None);
        let task_key = |s: Stage| self.key(s, task);
        let name = stage.name();
        if stage.per_task() && task.is_none() {
            return Err(Error::InvalidArgument(format!("stage '{name}' needs a task")));
        }
        match stage {
            Stage::Simulate => match &c.input_manifest {
                Some(p) => {
                    let settings = serde_json::json!({"manifest": p, "sha256": file_sha256(Path::new(p))?});
                    stage_key("ingest", &settings, &[])
                }
                None => stage_key(name, &serde_json::json!({"seed": c.seed, "simulate": c.simulate}), &[]),
            },
            Stage::Preprocess => stage_key(name, &c.preprocess, &[&up(Stage::Simulate)?]),
            Stage::Locate => stage_key(
                name,
                &serde_json::json!({"locate": c.locate, "method": LOCATOR_METHOD}),
                &[&up(Stage::Preprocess)?],
            ),
            Stage::Findings => stage_key(
                name,
                &serde_json::json!({"findings": c.findings, "calibration": self.ctx.calibration}),
                &[&up(Stage::Preprocess)?],
            ),
            Stage::Reason => stage_key(
                name,
                &serde_json::json!({"remote": c.reason.remote, "kb": self.ctx.kb.to_json()?}),
                &[&up(Stage::Findings)?],
            ),
            Stage::LungRisk => {
                let file_hash = match &c.lungrisk.trajectory_file {
                    Some(p) => Some(file_sha256(Path::new(p))?),
                    None => None,
                };
                stage_key(
                    name,
                    &serde_json::json!({
                        "lungrisk": c.lungrisk,
                        "file_sha256": file_hash,
                        "surrogate": self.ctx.surrogate,
                    }),
                    &[&up(Stage::Findings)?],
                )
            }
            Stage::Features => stage_key(
                name,
                &serde_json::json!({"channels": CHANNEL_NAMES}),
                &[&up(Stage::Preprocess)?, &up(Stage::Locate)?],
            ),
            Stage::Train => stage_key(
                name,
                &serde_json::json!({
                    "task": task,
                    "variant": c.variant,
                    "training": c.training(),
                    "params_format": PARAMS_FORMAT,
                }),
                &self.dataset_keys()?.iter().map(String::as_str).collect::<Vec<_>>(),
            ),
            Stage::Evaluate => stage_key(
                name,
                &serde_json::json!({"task": task, "evaluate": c.evaluation()}),
                &[&task_key(Stage::Train)?],
            ),
            Stage::Ablate => stage_key(
                name,
                &serde_json::json!({
                    "seed": c.seed,
                    "training": c.training(),
                    "evaluate": c.evaluation(),
                }),
                &self.dataset_keys()?.iter().map(String::as_str).collect::<Vec<_>>(),
            ),
            Stage::Explain => stage_key(
                name,
                &serde_json::json!({"task": task, "explain": c.explain}),
                &[
                    &task_key(Stage::Train)?,
                    &up(Stage::Preprocess)?,
                    &up(Stage::Locate)?,
                    &up(Stage::Reason)?,
                ],
            ),
        }
    }

    fn dataset_keys(&self) -> Result<Vec<String>> {
        [Stage::Preprocess, Stage::Features, Stage::Findings, Stage::Reason, Stage::LungRisk]
            .into_iter()
            .map(|s| self.key(s, None))
            .collect()
    }

    /// Directory of a completed stage, or the error naming how to produce it.
    pub fn output_dir(&self, stage: Stage, task: Option<Task>) -> Result<PathBuf> {
        let label = stage_label(stage, task);
        self.run.require(&label, &self.key(stage, task)?, &remedy(stage, task))
    }

    fn record(&self, label: &str, key: &str) -> Result<()> {
        let fresh = ManifestOfRecord {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            kb_version: self.ctx.kb.version().to_string(),
            calibration_version: self.ctx.calibration.version.clone(),
            surrogate_version: self.ctx.surrogate.version.clone(),
            locator_method: LOCATOR_METHOD.to_string(),
            params_format: PARAMS_FORMAT.to_string(),
            stages: [(label.to_string(), RunDir::relative_stage_dir(label, key))].into(),
        };
        let merged = ManifestOfRecord::merge_into(&self.run, fresh)?;
        write_json(&merged, ManifestOfRecord::path(&self.run))?;
        write_json(&self.config, self.run.root().join("config.json"))
    }

    /// Runs one stage unless its cached output already exists. Upstream
    /// stages must have been run.
    pub fn run(&self, stage: Stage, task: Option<Task>) -> Result<PathBuf> {
        let label = stage_label(stage, task);
        let key = self.key(stage, task)?;
        create_dir(self.run.root())?;
        let dir = if self.run.is_complete(&label, &key) {
            log::info!("{label}: cached at {}", RunDir::relative_stage_dir(&label, &key));
            self.run.stage_dir(&label, &key)
        } else {
            log::info!("{label}: running");
            let dir = self.run.begin(&label, &key)?;
            match stage {
                Stage::Simulate => self.simulate(&dir)?,
                Stage::Preprocess => self.preprocess(&dir)?,
                Stage::Locate => self.locate(&dir)?,
                Stage::Findings => self.findings(&dir)?,
                Stage::Reason => self.reason(&dir)?,
                Stage::LungRisk => self.lungrisk(&dir)?,
                Stage::Features => self.features(&dir)?,
                Stage::Train => self.train(&dir, task.expect("checked by key"))?,
                Stage::Evaluate => self.evaluate(&dir, task.expect("checked by key"))?,
                Stage::Ablate => self.ablate(&dir)?,
                Stage::Explain => self.explain(&dir, task.expect("checked by key"))?,
            }
            self.run.finish(&label, &key)?;
            dir
        };
        self.record(&label, &key)?;
        self.publish(stage, task, &dir)?;
        Ok(dir)
    }

    /// Every stage in order, both tasks.
    pub fn run_all(&self) -> Result<()> {
        for stage in &Stage::ALL[..7] {
            self.run(*stage, None)?;
        }
        for task in Task::ALL {
            self.run(Stage::Train, Some(task))?;
            self.run(Stage::Evaluate, Some(task))?;
        }
        self.run(Stage::Ablate, None)?;
        for task in Task::ALL {
            self.run(Stage::Explain, Some(task))?;
        }
        Ok(())
    }

    fn publish(&self, stage: Stage, task: Option<Task>, dir: &Path) -> Result<()> {
        let files: Vec<String> = match (stage, task) {
            (Stage::Evaluate, Some(t)) => ["json", "txt"]
                .iter()
                .map(|ext| format!("report_{}.{ext}", t.name()))
                .chain(["csv", "svg"].iter().map(|ext| format!("roc_{}.{ext}", t.name())))
                .collect(),
            (Stage::Ablate, _) => ["ablation.json", "ablation.txt", "ablation.csv"]
                .iter()
                .map(|s| s.to_string())
                .chain(Task::ALL.iter().map(|t| format!("ablation_roc_{}.svg", t.name())))
                .collect(),
            _ => Vec::new(),
        };
        files.iter().try_for_each(|f| self.run.publish(&dir.join(f)))
    }

    // Shared readers.

    fn rows(&self, stage: Stage) -> Result<(PathBuf, Vec<ManifestRow>)> {
        let dir = self.output_dir(stage, None)?;
        let rows = read_manifest(dir.join("manifest.csv"))?;
        Ok((dir, rows))
    }

    /// Preprocessed volume of one manifest row, in clipped HU.
    pub fn load_preprocessed(&self, dir: &Path, row: &ManifestRow) -> Result<CtVolume> {
        let v = load_volume(dir.join(&row.volume_path))?;
        ensure_clipped(v.with_ids(row.subject_id.clone(), row.scan_id.clone()))
    }

    pub fn load_rois(&self) -> Result<BTreeMap<String, HeartRoi>> {
        read_json(self.output_dir(Stage::Locate, None)?.join("rois.json"))
    }

    pub fn load_findings(&self) -> Result<BTreeMap<String, FindingsRecord>> {
        read_json(self.output_dir(Stage::Findings, None)?.join("findings.json"))
    }

    pub fn load_traces(&self) -> Result<BTreeMap<String, ReasoningTrace>> {
        read_json(self.output_dir(Stage::Reason, None)?.join("traces.json"))
    }

    pub fn load_trajectories(&self) -> Result<BTreeMap<String, RiskTrajectory>> {
        let path = self.output_dir(Stage::LungRisk, None)?.join("lungrisk.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let mut out = BTreeMap::new();
        for row in r.deserialize() {
            let row: LungRow = row?;
            let values = [row.y1, row.y2, row.y3, row.y4, row.y5, row.y6];
            out.insert(row.scan_id, RiskTrajectory { values, source: row.source });
        }
        Ok(out)
    }

    /// Assembles the per-scan feature table and subject labels from the
    /// cached stage outputs.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let cardiac = read_feature_cache(self.output_dir(Stage::Features, None)?.join("cardiac_features.csv"))?;
        let (_, rows) = self.rows(Stage::Preprocess)?;
        let findings = self.load_findings()?;
        let traces = self.load_traces()?;
        let lung = self.load_trajectories()?;
        let stamp = self.ctx.kb.stamp();
        let missing = |what: &str, scan: &str| Error::Schema(format!("no {what} for scan '{scan}'"));
        let mut scans = Vec::with_capacity(rows.len());
        let mut labels: BTreeMap<String, (u8, u8)> = BTreeMap::new();
        for row in &rows {
            let id = row.scan_id.as_str();
            let c = cardiac.get(id).ok_or_else(|| missing("cardiac features", id))?;
            let f = findings.get(id).ok_or_else(|| missing("findings", id))?.to_set()?;
            let t = traces.get(id).ok_or_else(|| missing("reasoning trace", id))?;
            let l = lung.get(id).ok_or_else(|| missing("lung-risk trajectory", id))?;
            scans.push(ScanFeatures {
                subject_id: row.subject_id.clone(),
                scan_id: row.scan_id.clone(),
                cardiac: c.to_vec(),
                finding_scores: f.score_vector(),
                indicators: encode_indicators(t, &stamp)?,
                lung: l.values,
            });
            let lab = (row.label_screening, row.label_mortality);
            if *labels.entry(row.subject_id.clone()).or_insert(lab) != lab {
                return Err(Error::Schema(format!("conflicting labels for subject '{}'", row.subject_id)));
            }
        }
        Ok(Dataset { scans, labels })
    }

    // Stage bodies.

    fn simulate(&self, dir: &Path) -> Result<()> {
        if let Some(manifest) = &self.config.input_manifest {
            let manifest = Path::new(manifest);
            let base = manifest.parent().unwrap_or(Path::new("."));
            let mut rows = read_manifest(manifest)?;
            for row in &mut rows {
                let p = base.join(&row.volume_path);
                let p = std::fs::canonicalize(&p).map_err(|e| Error::io(&p, e))?;
                row.volume_path = p.to_string_lossy().into_owned();
            }
            return write_manifest(&rows, dir.join("manifest.csv"));
        }
        let sim = &self.config.simulate;
        let records = self
            .pool
            .install(|| sample_cohort(sim.n_subjects, self.config.seed, &sim.weights, &sim.options))?;
        write_json(&records, dir.join("cohort.json"))?;
        create_dir(&dir.join("volumes"))?;
        let jobs: Vec<(usize, usize)> = records
            .iter()
            .enumerate()
            .flat_map(|(r, rec)| (0..rec.scan_ids.len()).map(move |s| (r, s)))
            .collect();
        let rows = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(r, s)| {
                    let rec = &records[r];
                    let v = rec.scan_volume(s)?;
                    let rel = format!("volumes/{}__{}.nii", rec.subject_id, rec.scan_ids[s]);
                    save_volume(&v, dir.join(&rel))?;
                    Ok(ManifestRow {
                        subject_id: rec.subject_id.clone(),
                        scan_id: rec.scan_ids[s].clone(),
                        volume_path: rel,
                        label_screening: rec.label_screening,
                        label_mortality: rec.label_mortality,
                        oracle_true_risk: rec.true_risk,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        write_manifest(&rows, dir.join("manifest.csv"))
    }

    fn preprocess(&self, dir: &Path) -> Result<()> {
        let (src, rows) = self.rows(Stage::Simulate)?;
        create_dir(&dir.join("volumes"))?;
        let target = self.config.preprocess.target_spacing_mm;
        let out = self.pool.install(|| {
            rows.par_iter()
                .map(|row| {
                    let raw = load_volume(src.join(&row.volume_path))?
                        .with_ids(row.subject_id.clone(), row.scan_id.clone());
                    let v = preprocess(&raw, target)?;
                    let rel = format!("volumes/{}__{}.nii", safe_name(&row.subject_id), safe_name(&row.scan_id));
                    save_volume(&v, dir.join(&rel))?;
                    Ok(ManifestRow { volume_path: rel, ..row.clone() })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        write_manifest(&out, dir.join("manifest.csv"))
    }

    /// Runs `f` on every preprocessed scan in parallel, keyed by scan id.
    fn per_scan<T: Send>(&self, f: impl Fn(&Path, &ManifestRow) -> Result<T> + Sync) -> Result<BTreeMap<String, T>> {
        let (src, rows) = self.rows(Stage::Preprocess)?;
        let out = self.pool.install(|| {
            rows.par_iter()
                .map(|row| Ok((row.scan_id.clone(), f(&src, row)?)))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(out.into_iter().collect())
    }

    fn locate(&self, dir: &Path) -> Result<()> {
        let rois = self.per_scan(|src, row| {
            let v = self.load_preprocessed(src, row)?;
            let body = body_mask(&v)?;
            let lungs = lung_mask(&v, &body)?;
            locate_with_masks(&v, &body, &lungs, &self.ctx.locator)
        })?;
        write_json(&rois, dir.join("rois.json"))
    }

    fn findings(&self, dir: &Path) -> Result<()> {
        let remote = self.config.findings.remote.as_ref();
        let found = self.per_scan(|src, row| {
            let set = match remote {
                Some(cfg) => {
                    let path = src.join(&row.volume_path);
                    fetch_findings_remote(&format!("{}={}", row.scan_id, path.display()), cfg)?
                }
                None => {
                    let v = self.load_preprocessed(src, row)?;
                    let body = body_mask(&v)?;
                    let lungs = lung_mask(&v, &body)?;
                    score_findings_with(&v, &lungs, &self.ctx.calibration)?
                }
            };
            Ok(FindingsRecord {
                source: set.source(),
                findings: set.findings().to_vec(),
            })
        })?;
        write_json(&found, dir.join("findings.json"))
    }

    fn reason(&self, dir: &Path) -> Result<()> {
        let findings = self.load_findings()?;
        let remote = self.config.reason.remote.as_ref();
        let kb = &self.ctx.kb;
        let traces = self.pool.install(|| {
            findings
                .par_iter()
                .map(|(scan, rec)| {
                    let set = rec.to_set()?;
                    let trace = match remote {
                        Some(cfg) => fetch_reasoning_remote(&set, kb, cfg)?,
                        None => reason(&set, kb),
                    };
                    Ok((scan.clone(), trace))
                })
                .collect::<Result<BTreeMap<_, _>>>()
        })?;
        write_json(&traces, dir.join("traces.json"))
    }

    fn lungrisk(&self, dir: &Path) -> Result<()> {
        let findings = self.load_findings()?;
        let file = match &self.config.lungrisk.trajectory_file {
            Some(p) => Some(load_trajectory_table(p, self.config.lungrisk.repair)?),
            None => None,
        };
        let path = dir.join("lungrisk.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        for (scan, rec) in &findings {
            let t = match &file {
                Some(table) => table
                    .get(scan)
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("scan '{scan}' missing from trajectory file")))?,
                None => estimate_trajectory(&rec.to_set()?, &self.ctx.surrogate),
            };
            let [y1, y2, y3, y4, y5, y6] = t.values;
            w.serialize(LungRow { scan_id: scan.clone(), y1, y2, y3, y4, y5, y6, source: t.source })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn features(&self, dir: &Path) -> Result<()> {
        let rois = self.load_rois()?;
        let rows = self.per_scan(|src, row| {
            let v = self.load_preprocessed(src, row)?;
            let roi = rois
                .get(&row.scan_id)
                .ok_or_else(|| Error::Schema(format!("no ROI for scan '{}'", row.scan_id)))?;
            let f = extract_cardiac_features(&crop_roi(&v, &roi.roi_box())?)?;
            Ok::<[f64; D_CARD], Error>(f.values)
        })?;
        write_feature_cache(&rows, dir.join("cardiac_features.csv"))
    }

    fn train(&self, dir: &Path, task: Task) -> Result<()> {
        let data = self.load_dataset()?;
        let split = data.split(self.config.seed)?;
        let outcome = crate::eval::train_variant(
            &data,
            &split,
            self.config.variant,
            task,
            &self.ctx.kb.stamp(),
            &self.config.training(),
        )?;
        save_params(&outcome.params, dir.join(format!("model_{}.json", task.name())))?;
        let log = TrainingLog {
            task,
            variant: self.config.variant,
            best_epoch: outcome.best_epoch,
            epochs: outcome.log,
        };
        write_json(&log, dir.join(format!("training_log_{}.json", task.name())))?;
        write_json(&split, dir.join("split.json"))
    }

    /// Trained params and the split they were trained on.
    pub fn load_model(&self, task: Task) -> Result<(ModelParams, Split)> {
        let dir = self.output_dir(Stage::Train, Some(task))?;
        let params = load_params(dir.join(format!("model_{}.json", task.name())), &self.ctx.kb.stamp())?;
        let split: Split = read_json(dir.join("split.json"))?;
        Ok((params, split))
    }

    fn evaluate(&self, dir: &Path, task: Task) -> Result<()> {
        let (params, split) = self.load_model(task)?;
        let data = self.load_dataset()?;
        let report = evaluate_params(&data, &split, &params, task, &self.config.evaluation())?;
        let t = task.name();
        write_json(&report, dir.join(format!("report_{t}.json")))?;
        write_text(&render_table(std::slice::from_ref(&report)), &dir.join(format!("report_{t}.txt")))?;
        write_roc_csv(std::slice::from_ref(&report), dir.join(format!("roc_{t}.csv")))?;
        let svg = roc_svg(std::slice::from_ref(&report), &format!("ROC, {t}"));
        write_text(&svg, &dir.join(format!("roc_{t}.svg")))
    }

    fn ablate(&self, dir: &Path) -> Result<()> {
        let data = self.load_dataset()?;
        let c = &self.config;
        let report = self
            .pool
            .install(|| run_ablation(&data, &self.ctx.kb.stamp(), c.seed, &c.training(), &c.evaluation()))?;
        write_json(&report, dir.join("ablation.json"))?;
        write_text(&report.table(), &dir.join("ablation.txt"))?;
        write_reports_csv(&report.reports, dir.join("ablation.csv"))?;
        for task in Task::ALL {
            let of_task: Vec<EvalReport> = report.reports.iter().filter(|r| r.task == task).cloned().collect();
            let svg = roc_svg(&of_task, &format!("Ablation ROC, {}", task.name()));
            write_text(&svg, &dir.join(format!("ablation_roc_{}.svg", task.name())))?;
        }
        Ok(())
    }

    fn explain(&self, dir: &Path, task: Task) -> Result<()> {
        let (params, split) = self.load_model(task)?;
        let data = self.load_dataset()?;
        let scans: Vec<&ScanFeatures> = if self.config.explain.scans.is_empty() {
            let test: std::collections::BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
            data.scans
                .iter()
                .filter(|s| test.contains(s.subject_id.as_str()))
                .take(DEFAULT_EXPLAIN_SCANS)
                .collect()
        } else {
            self.config
                .explain
                .scans
                .iter()
                .map(|id| {
                    data.scans
                        .iter()
                        .find(|s| &s.scan_id == id)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown scan '{id}' in explain.scans")))
                })
                .collect::<Result<_>>()?
        };
        let (src, rows) = self.rows(Stage::Preprocess)?;
        let rois = self.load_rois()?;
        let traces = self.load_traces()?;
        for sf in scans {
            let id = &sf.scan_id;
            let x = sf.to_input(params.variant, data.label(&sf.subject_id, task)?);
            let attribution = attribute_input(&params, &x)?;
            let roi = rois.get(id).ok_or_else(|| Error::Schema(format!("no ROI for scan '{id}'")))?;
            let heat_volume = if params.variant.uses_cardiac() {
                let row = rows.iter().find(|r| &r.scan_id == id).expect("dataset rows come from this manifest");
                let roi_vol = crop_roi(&self.load_preprocessed(&src, row)?, &roi.roi_box())?;
                let features = extract_cardiac_features(&roi_vol)?;
                let heat = project_cardiac_attribution(&attribution, &features, &roi_vol)?;
                let name = format!("heat_{}.nii", safe_name(id));
                heat.save(dir.join(&name))?;
                Some(name)
            } else {
                None
            };
            let rationale = if has_indicator_block(&params) {
                let trace = traces.get(id).ok_or_else(|| Error::Schema(format!("no trace for scan '{id}'")))?;
                let ann = attribute_indicators(&attribution, trace, &self.ctx.kb, self.config.explain.top_k)?;
                write_json(&ann, dir.join(format!("rationale_{}.json", safe_name(id))))?;
                Some(ann)
            } else {
                None
            };
            let explanation = ScanExplanation {
                scan_id: id.clone(),
                task,
                probability: forward(&params, &x)?,
                roi: roi.clone(),
                attribution,
                heat_volume,
                rationale,
            };
            write_json(&explanation, dir.join(format!("explain_{}.json", safe_name(id))))?;
        }
        Ok(())
    }
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn per_task_stage_needs_task_and_keys_differ_by_task() {
        let tmp = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), tmp.path()).unwrap();
        assert!(p.key(Stage::Train, None).is_err());
        let a = p.key(Stage::Train, Some(Task::Screening)).unwrap();
        let b = p.key(Stage::Train, Some(Task::Mortality)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn upstream_config_change_changes_downstream_keys() {
        let tmp = tempfile::tempdir().unwrap();
        let base = Pipeline::new(PipelineConfig::default(), tmp.path()).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.preprocess.target_spacing_mm = 2.0;
        let other = Pipeline::new(cfg, tmp.path()).unwrap();
        assert_eq!(base.key(Stage::Simulate, None).unwrap(), other.key(Stage::Simulate, None).unwrap());
        for s in [Stage::Preprocess, Stage::Features, Stage::Ablate] {
            assert_ne!(base.key(s, None).unwrap(), other.key(s, None).unwrap(), "{s}");
        }
    }

    #[test]
    fn train_without_features_names_the_missing_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), tmp.path()).unwrap();
        let err = p.run(Stage::Train, Some(Task::Screening)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "features"), "{err}");
    }
}
