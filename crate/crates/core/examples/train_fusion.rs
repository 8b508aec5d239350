//! Trains the full fusion head on a small 48³ cohort and prints the
//! per-epoch log.

use cardiopulm::cohort::{sample_cohort, CohortOptions, RiskWeights, Task};
use cardiopulm::eval::train_variant;
use cardiopulm::fusion::Variant;
use cardiopulm::locator::LocatorConfig;
use cardiopulm::pipeline::{build_dataset, desk_training, ScanContext};

fn main() -> cardiopulm::Result<()> {
    let options = CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, ..CohortOptions::default() };
    let cohort = sample_cohort(400, 3, &RiskWeights::default(), &options)?;
    let ctx = ScanContext::shipped(LocatorConfig { roi_extent: [24, 24, 24] }, 1.5);
    let data = build_dataset(&cohort, &ctx)?;
    let split = data.split(3)?;
    let config = desk_training();
    let out = train_variant(&data, &split, Variant::CardiacLungReasoning, Task::Screening, &ctx.kb.stamp(), &config)?;
    for e in &out.log {
        println!("epoch {:>3}  lr {:.2e}  loss {:.4}  val AUC {:.4}", e.epoch, e.lr, e.train_loss, e.val_auc);
    }
    println!("best epoch {}, {} parameters", out.best_epoch, out.params.parameter_count());
    Ok(())
}
