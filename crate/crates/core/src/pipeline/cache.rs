//! Content-addressed stage directories and the run's manifest of record.
//!
//! Every stage writes into `<run>/stages/<stage>-<key>` where the key hashes
//! the stage name, its configuration, upstream keys and component versions.
//! A `.complete` marker is written last; a directory without it is treated
//! as absent and rebuilt.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::sha256_hex;
use crate::{Error, Result};

const COMPLETE_MARKER: &str = ".complete";
/// Hex characters of the key kept in directory names.
const KEY_PREFIX_LEN: usize = 16;

/// Key of a stage from its name, its own settings and its upstream keys.
pub fn stage_key<T: Serialize>(stage: &str, settings: &T, upstream: &[&str]) -> Result<String> {
    let doc = serde_json::json!({
        "stage": stage,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "upstream": upstream,
    });
    Ok(sha256_hex(&serde_json::to_vec(&doc)?))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Directory name relative to the run root, e.g. `stages/train-screening-0123abcd...`.
    pub fn relative_stage_dir(label: &str, key: &str) -> String {
        format!("stages/{label}-{}", &key[..KEY_PREFIX_LEN])
    }

    pub fn stage_dir(&self, label: &str, key: &str) -> PathBuf {
        self.root.join(Self::relative_stage_dir(label, key))
    }

    pub fn is_complete(&self, label: &str, key: &str) -> bool {
        self.stage_dir(label, key).join(COMPLETE_MARKER).is_file()
    }

    /// Output directory of a finished upstream stage.
    pub fn require(&self, label: &str, key: &str, remedy: &str) -> Result<PathBuf> {
        if self.is_complete(label, key) {
            Ok(self.stage_dir(label, key))
        } else {
            Err(Error::MissingStage {
                stage: label.to_string(),
                remedy: remedy.to_string(),
            })
        }
    }

    /// Fresh, empty directory for a stage about to run.
    pub fn begin(&self, label: &str, key: &str) -> Result<PathBuf> {
        let dir = self.stage_dir(label, key);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        create_dir(&dir)?;
        Ok(dir)
    }

    pub fn finish(&self, label: &str, key: &str) -> Result<()> {
        let marker = self.stage_dir(label, key).join(COMPLETE_MARKER);
        fs::write(&marker, key).map_err(|e| Error::io(&marker, e))
    }

    /// Copies `file` from a stage directory into `reports/`.
    pub fn publish(&self, file: &Path) -> Result<()> {
        let dir = self.reports_dir();
        create_dir(&dir)?;
        let name = file.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", file.display())))?;
        let dest = dir.join(name);
        fs::copy(file, &dest).map_err(|e| Error::io(&dest, e))?;
        Ok(())
    }
}

/// Everything needed to reproduce the run's outputs bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestOfRecord {
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub kb_version: String,
    pub calibration_version: String,
    pub surrogate_version: String,
    pub locator_method: String,
    pub params_format: String,
    /// Stage label → stage directory relative to the run root.
    pub stages: BTreeMap<String, String>,
}

impl ManifestOfRecord {
    pub fn path(run: &RunDir) -> PathBuf {
        run.root().join("manifest.json")
    }

    /// Loads the existing manifest when it belongs to the same config, so
    /// stages run one at a time accumulate into one record.
    pub fn merge_into(run: &RunDir, fresh: ManifestOfRecord) -> Result<ManifestOfRecord> {
        let path = Self::path(run);
        if path.is_file() {
            let old: ManifestOfRecord = read_json(&path)?;
            if old.config_hash == fresh.config_hash && old.crate_version == fresh.crate_version {
                let mut merged = fresh;
                for (k, v) in old.stages {
                    merged.stages.entry(k).or_insert(v);
                }
                return Ok(merged);
            }
        }
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_change_with_settings_and_upstream() {
        let a = stage_key("locate", &[32, 32, 32], &["k1"]).unwrap();
        assert_eq!(a, stage_key("locate", &[32, 32, 32], &["k1"]).unwrap());
        assert_ne!(a, stage_key("locate", &[16, 16, 16], &["k1"]).unwrap());
        assert_ne!(a, stage_key("locate", &[32, 32, 32], &["k2"]).unwrap());
        assert_ne!(a, stage_key("findings", &[32, 32, 32], &["k1"]).unwrap());
    }

    #[test]
    fn incomplete_stage_is_missing() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::new(tmp.path());
        let key = stage_key("features", &(), &[]).unwrap();
        let err = run.require("features", &key, "run `cardiopulm features`").unwrap_err();
        assert!(matches!(err, Error::MissingStage { ref stage, .. } if stage == "features"));
        assert_eq!(err.exit_code(), 3);
        run.begin("features", &key).unwrap();
        assert!(run.require("features", &key, "").is_err());
        run.finish("features", &key).unwrap();
        assert!(run.require("features", &key, "").is_ok());
    }
}
