//! Scored pulmonary findings.
//!
//! Findings come from the rule-based signature detectors in [`signatures`],
//! from a findings JSON file, or from a remote perception service
//! ([`remote`]). Whatever the source, a [`FindingSet`] keeps every score in
//! `[0, 1]` and retains exactly the findings scoring at least
//! [`RETENTION_THRESHOLD`].

pub mod calibration;
pub mod remote;
pub mod signatures;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use remote::{fetch_findings_remote, RemoteConfig};
pub use signatures::{score_findings, signature_statistics, SignatureStats};

pub const RETENTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finding {
    Opacity,
    PleuralEffusion,
    Fibrosis,
    Emphysema,
    Nodule,
}

impl Finding {
    pub const ALL: [Finding; 5] = [
        Finding::Opacity,
        Finding::PleuralEffusion,
        Finding::Fibrosis,
        Finding::Emphysema,
        Finding::Nodule,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Finding::Opacity => "opacity",
            Finding::PleuralEffusion => "pleural_effusion",
            Finding::Fibrosis => "fibrosis",
            Finding::Emphysema => "emphysema",
            Finding::Nodule => "nodule",
        }
    }

    pub fn index(self) -> usize {
        Finding::ALL.iter().position(|&f| f == self).unwrap()
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Finding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Finding::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidFindings(format!("unknown finding '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingSource {
    RuleBased,
    ExternalService,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFinding {
    pub name: Finding,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingSet {
    findings: Vec<ScoredFinding>,
    retained: Vec<Finding>,
    source: FindingSource,
}

impl FindingSet {
    pub fn findings(&self) -> &[ScoredFinding] {
        &self.findings
    }

    pub fn retained(&self) -> &[Finding] {
        &self.retained
    }

    pub fn source(&self) -> FindingSource {
        self.source
    }

    pub fn score(&self, name: Finding) -> Option<f64> {
        self.findings.iter().find(|f| f.name == name).map(|f| f.score)
    }

    /// Score of `name`, zero when absent.
    pub fn score_or_zero(&self, name: Finding) -> f64 {
        self.score(name).unwrap_or(0.0)
    }

    pub fn is_retained(&self, name: Finding) -> bool {
        self.retained.contains(&name)
    }

    /// Scores in canonical [`Finding::ALL`] order, zero where absent.
    pub fn score_vector(&self) -> [f64; 5] {
        Finding::ALL.map(|f| self.score_or_zero(f))
    }

    /// The retained findings with their scores, as a new set.
    pub fn retained_view(&self) -> Vec<ScoredFinding> {
        self.findings
            .iter()
            .filter(|f| self.retained.contains(&f.name))
            .copied()
            .collect()
    }

    pub fn with_source(mut self, source: FindingSource) -> Self {
        self.source = source;
        self
    }
}

/// Validates raw scores and applies the retention threshold (`score >= 0.5`).
pub fn filter_findings(raw: &[ScoredFinding], source: FindingSource) -> Result<FindingSet> {
    let mut seen = Vec::with_capacity(raw.len());
    for f in raw {
        if !(0.0..=1.0).contains(&f.score) {
            return Err(Error::InvalidFindings(format!(
                "score {} for {} outside [0, 1]",
                f.score, f.name
            )));
        }
        if seen.contains(&f.name) {
            return Err(Error::InvalidFindings(format!("duplicate finding {}", f.name)));
        }
        seen.push(f.name);
    }
    let retained = raw
        .iter()
        .filter(|f| f.score >= RETENTION_THRESHOLD)
        .map(|f| f.name)
        .collect();
    Ok(FindingSet {
        findings: raw.to_vec(),
        retained,
        source,
    })
}

/// Wire/file schema: `{"findings": [{"name": ..., "score": ...}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FindingsDocument {
    pub findings: Vec<WireFinding>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireFinding {
    pub name: String,
    pub score: f64,
}

impl FindingsDocument {
    pub fn from_set(set: &FindingSet) -> Self {
        FindingsDocument {
            findings: set
                .findings
                .iter()
                .map(|f| WireFinding {
                    name: f.name.name().to_string(),
                    score: f.score,
                })
                .collect(),
        }
    }

    pub fn into_set(self, source: FindingSource) -> Result<FindingSet> {
        let raw = self
            .findings
            .into_iter()
            .map(|w| {
                let name = w.name.parse().map_err(|_| {
                    Error::Schema(format!("unknown finding name '{}'", w.name))
                })?;
                if !(0.0..=1.0).contains(&w.score) {
                    return Err(Error::Schema(format!(
                        "score {} for {} outside [0, 1]",
                        w.score, w.name
                    )));
                }
                Ok(ScoredFinding { name, score: w.score })
            })
            .collect::<Result<Vec<_>>>()?;
        filter_findings(&raw, source).map_err(|e| Error::Schema(e.to_string()))
    }
}

pub fn load_findings_file(path: impl AsRef<Path>) -> Result<FindingSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: FindingsDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    doc.into_set(FindingSource::File)
}

pub fn save_findings_file(set: &FindingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&FindingsDocument::from_set(set))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sf(name: Finding, score: f64) -> ScoredFinding {
        ScoredFinding { name, score }
    }

    #[test]
    fn threshold_examples() {
        let s = filter_findings(&[sf(Finding::Opacity, 0.7), sf(Finding::Nodule, 0.4)], FindingSource::RuleBased).unwrap();
        assert_eq!(s.retained(), &[Finding::Opacity]);
        let s = filter_findings(&[sf(Finding::Fibrosis, 0.5)], FindingSource::RuleBased).unwrap();
        assert_eq!(s.retained(), &[Finding::Fibrosis]);
        assert!(filter_findings(&[sf(Finding::Emphysema, 1.2)], FindingSource::RuleBased).is_err());
        assert!(filter_findings(&[sf(Finding::Emphysema, f64::NAN)], FindingSource::RuleBased).is_err());
        assert!(filter_findings(&[sf(Finding::Nodule, 0.1), sf(Finding::Nodule, 0.2)], FindingSource::RuleBased).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for f in Finding::ALL {
            assert_eq!(f.name().parse::<Finding>().unwrap(), f);
        }
        assert!("edema".parse::<Finding>().is_err());
    }

    #[test]
    fn file_roundtrip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        let s = filter_findings(&[sf(Finding::Opacity, 0.9), sf(Finding::Nodule, 0.2)], FindingSource::RuleBased).unwrap();
        save_findings_file(&s, &p).unwrap();
        let back = load_findings_file(&p).unwrap();
        assert_eq!(back.findings(), s.findings());
        assert_eq!(back.source(), FindingSource::File);
        std::fs::write(&p, r#"{"findings":[{"name":"opacity","score":1.3}]}"#).unwrap();
        assert!(matches!(load_findings_file(&p), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_on_retained_view(scores in proptest::array::uniform5(0.0f64..=1.0)) {
            let raw: Vec<_> = Finding::ALL.iter().zip(scores).map(|(&f, s)| sf(f, s)).collect();
            let once = filter_findings(&raw, FindingSource::RuleBased).unwrap();
            let twice = filter_findings(&once.retained_view(), FindingSource::RuleBased).unwrap();
            prop_assert_eq!(once.retained(), twice.retained());
            for f in Finding::ALL {
                prop_assert_eq!(once.is_retained(f), once.score_or_zero(f) >= 0.5);
            }
        }
    }
}
