//! Frozen logistic maps from signature statistics to finding scores.
//!
//! `score = σ(k·(stat − c))`. The shipped constants were fitted with
//! [`fit_calibration`] on a phantom severity grid (see the
//! `calibrate_perception` example) so that scores track planted severity,
//! putting the 0.5 retention threshold near severity 0.5.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::signatures::signature_statistics;
use super::Finding;
use crate::cohort::{generate_phantom, PhantomSpec};
use crate::locator::{body_mask, lung_mask};
use crate::volume::clip_hu;
use crate::{Error, Result};

const SHIPPED: &str = include_str!("../../assets/perception_calibration.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCurve {
    pub k: f64,
    pub c: f64,
}

impl LogisticCurve {
    pub fn eval(&self, stat: f64) -> f64 {
        1.0 / (1.0 + (-self.k * (stat - self.c)).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionCalibration {
    pub version: String,
    pub curves: BTreeMap<Finding, LogisticCurve>,
}

impl PerceptionCalibration {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped calibration is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: PerceptionCalibration = serde_json::from_str(text)?;
        for f in Finding::ALL {
            match cal.curves.get(&f) {
                Some(c) if c.k > 0.0 && c.k.is_finite() && c.c.is_finite() => {}
                _ => return Err(Error::Config(format!("calibration curve for {f} missing or invalid"))),
            }
        }
        Ok(cal)
    }

    pub fn score(&self, f: Finding, stat: f64) -> f64 {
        self.curves[&f].eval(stat)
    }
}

/// One calibration phantom: a single planted finding at one severity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub finding: Finding,
    pub severity: f64,
    pub seed: u64,
    pub stat: f64,
}

/// Measures every finding's statistic on phantoms carrying only that
/// finding, at each severity level and seed.
pub fn measure_grid(dims: [usize; 3], levels: &[f64], seeds: &[u64]) -> Result<Vec<GridPoint>> {
    let mut jobs = Vec::new();
    for f in Finding::ALL {
        for &s in levels {
            for &seed in seeds {
                jobs.push((f, s, seed));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(finding, severity, seed)| {
            let spec = PhantomSpec::standard(seed, dims).with_severity(finding, severity);
            let v = clip_hu(&generate_phantom(&spec)?)?;
            let body = body_mask(&v)?;
            let lungs = lung_mask(&v, &body)?;
            let stat = signature_statistics(&v, &lungs)?.get(finding);
            Ok(GridPoint { finding, severity, seed, stat })
        })
        .collect()
}

/// Least-squares fit of `σ(k(stat − c))` to the severities: coarse grid
/// search then coordinate refinement.
pub fn fit_logistic(points: &[(f64, f64)]) -> LogisticCurve {
    let loss = |k: f64, c: f64| -> f64 {
        points
            .iter()
            .map(|&(x, y)| (LogisticCurve { k, c }.eval(x) - y).powi(2))
            .sum()
    };
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let mut best = (f64::INFINITY, 1.0, lo);
    for ci in 0..=100 {
        let c = lo + span * ci as f64 / 100.0;
        for ki in 0..=80 {
            let k = (0.5 + 15.0 * ki as f64 / 80.0) / span;
            let l = loss(k, c);
            if l < best.0 {
                best = (l, k, c);
            }
        }
    }
    let (_, mut k, mut c) = best;
    let (mut dk, mut dc) = (k * 0.05, span * 0.005);
    for _ in 0..200 {
        let here = loss(k, c);
        let mut moved = false;
        for (nk, nc) in [(k + dk, c), (k - dk, c), (k, c + dc), (k, c - dc)] {
            if nk > 0.0 && loss(nk, nc) < here {
                k = nk;
                c = nc;
                moved = true;
                break;
            }
        }
        if !moved {
            dk *= 0.5;
            dc *= 0.5;
        }
    }
    LogisticCurve { k, c }
}

pub fn fit_calibration(grid: &[GridPoint], version: &str) -> PerceptionCalibration {
    let curves = Finding::ALL
        .iter()
        .map(|&f| {
            let pts: Vec<(f64, f64)> = grid
                .iter()
                .filter(|g| g.finding == f)
                .map(|g| (g.stat, g.severity))
                .collect();
            (f, fit_logistic(&pts))
        })
        .collect();
    PerceptionCalibration {
        version: version.to_string(),
        curves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_logistic() {
        let truth = LogisticCurve { k: 12.0, c: 0.3 };
        let pts: Vec<(f64, f64)> = (0..40).map(|i| {
            let x = i as f64 / 40.0;
            (x, truth.eval(x))
        }).collect();
        let fit = fit_logistic(&pts);
        assert!((fit.k - 12.0).abs() < 0.1 && (fit.c - 0.3).abs() < 0.005, "{fit:?}");
    }

    #[test]
    fn shipped_calibration_loads() {
        let cal = PerceptionCalibration::shipped();
        for f in Finding::ALL {
            assert!(cal.score(f, 1e6) > 0.99);
        }
        assert!(PerceptionCalibration::from_json(r#"{"version":"x","curves":{}}"#).is_err());
    }
}
