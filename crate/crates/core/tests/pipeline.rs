use std::path::Path;
use std::process::Command;

use cardiopulm::cohort::{generate_phantom, write_manifest, CohortOptions, ManifestRow, PhantomSpec, Task};
use cardiopulm::locator::LocatorConfig;
use cardiopulm::pipeline::{read_json, ManifestOfRecord, Pipeline, PipelineConfig, SimulateConfig, Stage};
use cardiopulm::volume::save_volume;
use cardiopulm::Error;

fn small_config(n_subjects: usize) -> PipelineConfig {
    PipelineConfig {
        seed: 3,
        simulate: SimulateConfig {
            n_subjects,
            options: CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, ..CohortOptions::default() },
            ..SimulateConfig::default()
        },
        locate: LocatorConfig { roi_extent: [24, 24, 24] },
        ..PipelineConfig::default()
    }
}

fn missing_stage(err: Error) -> String {
    match err {
        Error::MissingStage { stage, .. } => stage,
        other => panic!("expected a missing stage, got {other}"),
    }
}

#[test]
fn stages_refuse_to_run_before_their_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(12), tmp.path()).unwrap();
    assert_eq!(missing_stage(p.run(Stage::Locate, None).unwrap_err()), "preprocess");
    let err = p.run(Stage::Train, Some(Task::Screening)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn per_task_stages_need_a_task() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(12), tmp.path()).unwrap();
    assert!(p.run(Stage::Train, None).is_err());
}

#[test]
fn completed_stages_are_reused_and_config_changes_invalidate_them() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(12);
    let p = Pipeline::new(config.clone(), tmp.path()).unwrap();
    let sim = p.run(Stage::Simulate, None).unwrap();
    let pre = p.run(Stage::Preprocess, None).unwrap();
    let stamp = std::fs::metadata(pre.join("manifest.csv")).unwrap().modified().unwrap();
    assert_eq!(p.run(Stage::Preprocess, None).unwrap(), pre);
    assert_eq!(std::fs::metadata(pre.join("manifest.csv")).unwrap().modified().unwrap(), stamp);

    let manifest: ManifestOfRecord = read_json(tmp.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.config_hash, config.hash());
    assert!(manifest.stages.contains_key("simulate") && manifest.stages.contains_key("preprocess"));

    // New preprocessing settings leave the cohort valid but orphan everything downstream.
    let mut changed = config.clone();
    changed.preprocess.target_spacing_mm = 2.0;
    let q = Pipeline::new(changed, tmp.path()).unwrap();
    assert_eq!(q.output_dir(Stage::Simulate, None).unwrap(), sim);
    assert_eq!(missing_stage(q.run(Stage::Locate, None).unwrap_err()), "preprocess");
}

#[test]
fn seeds_change_the_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let a = Pipeline::new(small_config(12), tmp.path()).unwrap();
    let b = Pipeline::new(PipelineConfig { seed: 4, ..small_config(12) }, tmp.path()).unwrap();
    assert_ne!(a.key(Stage::Simulate, None).unwrap(), b.key(Stage::Simulate, None).unwrap());
}

#[test]
fn external_manifests_are_ingested() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(data.join("vols")).unwrap();
    let rows: Vec<ManifestRow> = (0..3)
        .map(|i| {
            let v = generate_phantom(&PhantomSpec::standard(40 + i, [48, 48, 48])).unwrap();
            let rel = format!("vols/ext{i}__ext{i}_t0.nii");
            save_volume(&v, data.join(&rel)).unwrap();
            ManifestRow {
                subject_id: format!("ext{i}"),
                scan_id: format!("ext{i}_t0"),
                volume_path: rel,
                label_screening: u8::from(i == 0),
                label_mortality: 0,
                oracle_true_risk: 0.0,
            }
        })
        .collect();
    write_manifest(&rows, data.join("manifest.csv")).unwrap();

    let config = PipelineConfig {
        input_manifest: Some(data.join("manifest.csv").to_string_lossy().into_owned()),
        ..small_config(12)
    };
    let p = Pipeline::new(config, tmp.path().join("run")).unwrap();
    for stage in [Stage::Simulate, Stage::Preprocess, Stage::Locate, Stage::Findings] {
        p.run(stage, None).unwrap();
    }
    let rois = p.load_rois().unwrap();
    assert_eq!(rois.keys().cloned().collect::<Vec<_>>(), ["ext0_t0", "ext1_t0", "ext2_t0"]);
    assert_eq!(p.load_findings().unwrap().len(), 3);
}

fn cli(run_dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cardiopulm"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = cli(tmp.path(), &["features"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("locate"));

    assert_eq!(cli(tmp.path(), &["--no-such-flag", "simulate"]).status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "simulate": {"n_subject": 5}}"#).unwrap();
    let out = cli(tmp.path(), &["--config", bad.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_runs_a_stage_from_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(&small_config(10)).unwrap()).unwrap();
    let out = cli(&tmp.path().join("run"), &["--config", path.to_str().unwrap(), "--seed", "9", "simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recorded: PipelineConfig = read_json(tmp.path().join("run/config.json")).unwrap();
    assert_eq!(recorded.seed, 9);
    assert_eq!(recorded.simulate.n_subjects, 10);
}
