//! ROC/AUC and subject-block bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::derive_seed;
use crate::{Error, Result};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
/// Largest tolerated share of single-class bootstrap resamples.
pub const MAX_DEGENERATE_FRACTION: f64 = 0.10;

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positives, {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mann-Whitney AUC: `(#concordant + ½·#tied) / (n_pos·n_neg)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    // Walk tie groups from the top: every positive in a group beats all
    // negatives below it and ties with the negatives inside it.
    let order = order_desc(scores);
    let mut neg_above = 0u64;
    let mut twice_concordant = 0u64;
    let mut g = 0;
    while g < order.len() {
        let mut end = g;
        let (mut p, mut n) = (0u64, 0u64);
        while end < order.len() && scores[order[end]] == scores[order[g]] {
            if labels[order[end]] == 1 { p += 1 } else { n += 1 }
            end += 1;
        }
        let neg_below = neg as u64 - neg_above - n;
        twice_concordant += p * (2 * neg_below + n);
        neg_above += n;
        g = end;
    }
    Ok(twice_concordant as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The (0, 0) point uses the
    /// maximum score plus one.
    pub threshold: f64,
}

/// ROC points at every distinct score, descending, starting at (0, 0) and
/// ending at (1, 1). Tied scores share one threshold.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check(scores, labels)?;
    let order = order_desc(scores);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: scores[order[0]] + 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut g = 0;
    while g < order.len() {
        let t = scores[order[g]];
        while g < order.len() && scores[order[g]] == t {
            if labels[order[g]] == 1 { tp += 1 } else { fp += 1 }
            g += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Trapezoid area under a ROC curve.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub median: f64,
    pub resamples: usize,
    /// Resamples drawn with a single class and therefore skipped.
    pub skipped: usize,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95% percentile interval from resampling subjects with replacement; every
/// scan of a drawn subject enters the resample.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[u8],
    subject_ids: &[String],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    check(scores, labels)?;
    if subject_ids.len() != scores.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: subject_ids.len(),
        });
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let mut ids: Vec<&String> = subject_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let blocks: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| (0..subject_ids.len()).filter(|&i| &subject_ids[i] == *id).collect())
        .collect();

    let values: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xB0075, r as u64));
            let mut s = Vec::with_capacity(scores.len());
            let mut l = Vec::with_capacity(scores.len());
            for _ in 0..blocks.len() {
                for &i in &blocks[rng.random_range(0..blocks.len())] {
                    s.push(scores[i]);
                    l.push(labels[i]);
                }
            }
            auc(&s, &l).ok()
        })
        .collect();
    let mut ok: Vec<f64> = values.into_iter().flatten().collect();
    let skipped = resamples - ok.len();
    if skipped as f64 > MAX_DEGENERATE_FRACTION * resamples as f64 || ok.is_empty() {
        return Err(Error::SingleClass(format!(
            "{skipped} of {resamples} bootstrap resamples had a single class"
        )));
    }
    ok.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: percentile(&ok, 0.025),
        hi: percentile(&ok, 0.975),
        median: percentile(&ok, 0.5),
        resamples,
        skipped,
    })
}
