//! Runs every stage into a temporary run directory, then reruns to show
//! that all stages come from the cache.

use cardiopulm::cohort::CohortOptions;
use cardiopulm::pipeline::{Pipeline, PipelineConfig, SimulateConfig};

fn main() -> cardiopulm::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = PipelineConfig {
        simulate: SimulateConfig {
            n_subjects: 500,
            options: CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, ..CohortOptions::default() },
            ..SimulateConfig::default()
        },
        locate: cardiopulm::locator::LocatorConfig { roi_extent: [24, 24, 24] },
        seed: 11,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, dir.path())?;
    pipeline.run_all()?;
    let reports = pipeline.run_dir().reports_dir();
    print!("{}", std::fs::read_to_string(reports.join("ablation.txt")).expect("ablation table"));
    let t = std::time::Instant::now();
    pipeline.run_all()?;
    println!("cached rerun took {:.2?}", t.elapsed());
    Ok(())
}
