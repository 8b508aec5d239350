//! Trains and evaluates all six fusion variants on one split of a small
//! cohort.

use cardiopulm::cohort::{sample_cohort, CohortOptions, RiskWeights};
use cardiopulm::eval::{run_ablation, EvalConfig};
use cardiopulm::locator::LocatorConfig;
use cardiopulm::pipeline::{build_dataset, desk_training, ScanContext};

fn main() -> cardiopulm::Result<()> {
    let options = CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, ..CohortOptions::default() };
    let cohort = sample_cohort(600, 5, &RiskWeights::default(), &options)?;
    let ctx = ScanContext::shipped(LocatorConfig { roi_extent: [24, 24, 24] }, 1.5);
    let data = build_dataset(&cohort, &ctx)?;
    let report = run_ablation(&data, &ctx.kb.stamp(), 5, &desk_training(), &EvalConfig::default())?;
    print!("{}", report.table());
    Ok(())
}
