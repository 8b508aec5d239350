//! Training and evaluating the fusion variants on one shared split.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{evaluate, render_table, Aggregation, EvalReport};
use super::split::{split_subjects, Split};
use super::metrics::DEFAULT_BOOTSTRAP_RESAMPLES;
use crate::cohort::Task;
use crate::fusion::{predict_batch, train, FusionInput, ModelParams, ScanFeatures, TrainOutcome, TrainingConfig, Variant};
use crate::reasoning::KbStamp;
use crate::{Error, Result};

/// Per-scan features plus subject outcome labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scans: Vec<ScanFeatures>,
    /// Subject id → (screening, mortality) labels.
    pub labels: BTreeMap<String, (u8, u8)>,
}

impl Dataset {
    pub fn label(&self, subject: &str, task: Task) -> Result<u8> {
        let (s, m) = self
            .labels
            .get(subject)
            .ok_or_else(|| Error::InvalidArgument(format!("no label for subject '{subject}'")))?;
        Ok(match task {
            Task::Screening => *s,
            Task::Mortality => *m,
        })
    }

    pub fn task_labels(&self, task: Task) -> BTreeMap<String, u8> {
        self.labels
            .iter()
            .map(|(k, &(s, m))| (k.clone(), if task == Task::Screening { s } else { m }))
            .collect()
    }

    /// Subject split stratified on the combined outcome (none, screening
    /// only, mortality), shared by both tasks.
    pub fn split(&self, seed: u64) -> Result<Split> {
        let strata: Vec<(String, u8)> = self.labels.iter().map(|(k, &(s, m))| (k.clone(), s + m)).collect();
        split_subjects(&strata, seed)
    }

    /// Fusion inputs for the scans of `subjects`, in dataset order.
    pub fn inputs(&self, subjects: &[String], variant: Variant, task: Task) -> Result<Vec<FusionInput>> {
        let keep: std::collections::BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        self.scans
            .iter()
            .filter(|s| keep.contains(s.subject_id.as_str()))
            .map(|s| Ok(s.to_input(variant, self.label(&s.subject_id, task)?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub resamples: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            aggregation: Aggregation::Max,
            seed: 0,
        }
    }
}

pub fn train_variant(
    data: &Dataset,
    split: &Split,
    variant: Variant,
    task: Task,
    kb: &KbStamp,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    let tr = data.inputs(&split.train, variant, task)?;
    let va = data.inputs(&split.val, variant, task)?;
    train(&tr, &va, variant, kb, config)
}

/// Scores the test fold and reports subject-level metrics.
pub fn evaluate_params(
    data: &Dataset,
    split: &Split,
    params: &ModelParams,
    task: Task,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let test = data.inputs(&split.test, params.variant, task)?;
    let scores = predict_batch(params, &test)?;
    let scans: Vec<(String, f64)> = test.iter().zip(scores).map(|(x, s)| (x.subject_id.clone(), s)).collect();
    evaluate(
        task,
        params.variant.name(),
        &scans,
        &data.task_labels(task),
        config.aggregation,
        config.resamples,
        config.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split_seed: u64,
    pub test_subjects: Vec<String>,
    pub reports: Vec<EvalReport>,
}

impl AblationReport {
    pub fn get(&self, task: Task, variant: Variant) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.task == task && r.variant_name == variant.name())
    }

    pub fn table(&self) -> String {
        render_table(&self.reports)
    }
}

/// Trains every variant for both tasks on the same split and training seed.
pub fn run_ablation(
    data: &Dataset,
    kb: &KbStamp,
    split_seed: u64,
    training: &TrainingConfig,
    eval: &EvalConfig,
) -> Result<AblationReport> {
    let split = data.split(split_seed)?;
    let jobs: Vec<(Task, Variant)> = Task::ALL
        .iter()
        .flat_map(|&t| Variant::ALL.iter().map(move |&v| (t, v)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(task, variant)| {
            let out = train_variant(data, &split, variant, task, kb, training)?;
            log::info!("{} / {}: best epoch {}", task.name(), variant.name(), out.best_epoch);
            evaluate_params(data, &split, &out.params, task, eval)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        split_seed,
        test_subjects: split.test.clone(),
        reports,
    })
}
