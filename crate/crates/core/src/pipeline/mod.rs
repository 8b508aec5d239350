//! Stage orchestration over a cached run directory.

mod cache;
mod config;
mod scan;
mod stages;

pub use cache::{read_json, stage_key, write_json, ManifestOfRecord, RunDir};
pub use config::{
    desk_training, sha256_hex, ExplainConfig, FindingsConfig, LungRiskConfig, PipelineConfig, PreprocessConfig,
    ReasonConfig, SimulateConfig, DESK_ROI_EXTENT,
};
pub use scan::{
    build_dataset, ensure_clipped, preprocess, process_preprocessed, process_volume, ScanContext, ScanOutputs,
};
pub use stages::{FindingsRecord, Pipeline, ScanExplanation, Stage, TrainingLog, DEFAULT_EXPLAIN_SCANS};
