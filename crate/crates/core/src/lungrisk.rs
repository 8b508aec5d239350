//! Cumulative lung-cancer risk trajectory over horizons of 1 to 6 years.
//!
//! The surrogate is a frozen logistic model over finding scores:
//! `y_t = σ(b + Σ c_f·score_f + δ·(t − 1))` with `δ > 0`, which makes every
//! trajectory non-decreasing by construction. Precomputed trajectories can be
//! read from a CSV with columns `scan_id, y1..y6`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::perception::{Finding, FindingSet};
use crate::{Error, Result};

pub const HORIZONS: usize = 6;
const SHIPPED: &str = include_str!("../assets/lung_surrogate.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Surrogate,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrajectory {
    pub values: [f64; HORIZONS],
    pub source: TrajectorySource,
}

impl RiskTrajectory {
    pub fn horizon_years(&self) -> [u32; HORIZONS] {
        std::array::from_fn(|i| i as u32 + 1)
    }

    fn validate(values: &[f64; HORIZONS]) -> Result<()> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Schema(format!("trajectory value {v} outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Schema(format!("non-monotone trajectory {values:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub version: String,
    pub bias: f64,
    pub coefficients: BTreeMap<Finding, f64>,
    pub delta: f64,
}

impl SurrogateParams {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped surrogate constants are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: SurrogateParams = serde_json::from_str(text)?;
        if !(p.delta > 0.0) {
            return Err(Error::Config("surrogate delta must be positive".into()));
        }
        if p.coefficients.values().chain([&p.bias]).any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite surrogate coefficient".into()));
        }
        Ok(p)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn estimate_trajectory(findings: &FindingSet, params: &SurrogateParams) -> RiskTrajectory {
    let base = params.bias
        + params
            .coefficients
            .iter()
            .map(|(f, c)| c * findings.score_or_zero(*f))
            .sum::<f64>();
    RiskTrajectory {
        values: std::array::from_fn(|t| sigmoid(base + params.delta * t as f64)),
        source: TrajectorySource::Surrogate,
    }
}

#[derive(Debug, Deserialize)]
struct TrajectoryRow {
    scan_id: String,
    y1: f64,
    y2: f64,
    y3: f64,
    y4: f64,
    y5: f64,
    y6: f64,
}

fn open_trajectory_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })
}

fn row_trajectory(row: &TrajectoryRow, repair: bool) -> Result<RiskTrajectory> {
    let mut values = [row.y1, row.y2, row.y3, row.y4, row.y5, row.y6];
    if repair && values.iter().all(|v| (0.0..=1.0).contains(v)) {
        for t in 1..HORIZONS {
            values[t] = values[t].max(values[t - 1]);
        }
    }
    RiskTrajectory::validate(&values).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("scan '{}': {m}", row.scan_id)),
        other => other,
    })?;
    Ok(RiskTrajectory {
        values,
        source: TrajectorySource::File,
    })
}

/// Reads the trajectory of `scan_id`. With `repair`, a non-monotone row is
/// replaced by its running maximum instead of being rejected.
pub fn load_trajectory_file(path: impl AsRef<Path>, scan_id: &str, repair: bool) -> Result<RiskTrajectory> {
    let path = path.as_ref();
    for row in open_trajectory_csv(path)?.deserialize() {
        let row: TrajectoryRow = row?;
        if row.scan_id == scan_id {
            return row_trajectory(&row, repair);
        }
    }
    Err(Error::Schema(format!("scan '{scan_id}' not found in {}", path.display())))
}

/// Reads every row of a trajectory file, keyed by scan id. Every row is
/// validated, and a scan listed twice is a schema error.
pub fn load_trajectory_table(path: impl AsRef<Path>, repair: bool) -> Result<BTreeMap<String, RiskTrajectory>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for row in open_trajectory_csv(path)?.deserialize() {
        let row: TrajectoryRow = row?;
        let t = row_trajectory(&row, repair)?;
        if out.insert(row.scan_id.clone(), t).is_some() {
            return Err(Error::Schema(format!("scan '{}' listed twice in {}", row.scan_id, path.display())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{filter_findings, FindingSource, ScoredFinding};

    fn set(items: &[(Finding, f64)]) -> FindingSet {
        let raw: Vec<_> = items.iter().map(|&(name, score)| ScoredFinding { name, score }).collect();
        filter_findings(&raw, FindingSource::RuleBased).unwrap()
    }

    #[test]
    fn baseline_and_monotone_in_nodule() {
        let p = SurrogateParams::shipped();
        let t0 = estimate_trajectory(&set(&[]), &p);
        for (t, v) in t0.values.iter().enumerate() {
            assert!((v - sigmoid(p.bias + p.delta * t as f64)).abs() < 1e-15);
        }
        assert!(t0.values.windows(2).all(|w| w[0] <= w[1]));
        let t1 = estimate_trajectory(&set(&[(Finding::Nodule, 1.0)]), &p);
        assert!(t1.values.iter().zip(&t0.values).all(|(a, b)| a > b));
        assert_eq!(t1.values.len(), 6);
    }

    #[test]
    fn csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(
            &p,
            "scan_id,y1,y2,y3,y4,y5,y6\ns1,0.01,0.02,0.03,0.05,0.07,0.10\ns2,0.1,0.2,0.4,0.3,0.5,0.6\ns3,0.1,1.5,0.4,0.5,0.5,0.6\n",
        )
        .unwrap();
        let t = load_trajectory_file(&p, "s1", false).unwrap();
        assert_eq!(t.values, [0.01, 0.02, 0.03, 0.05, 0.07, 0.10]);
        assert_eq!(t.source, TrajectorySource::File);
        let err = load_trajectory_file(&p, "s2", false).unwrap_err();
        assert!(err.to_string().contains("non-monotone"));
        let fixed = load_trajectory_file(&p, "s2", true).unwrap();
        assert_eq!(fixed.values[3], 0.4);
        assert!(load_trajectory_file(&p, "s3", true).is_err());
        assert!(load_trajectory_file(&p, "missing", false).is_err());
    }
}
