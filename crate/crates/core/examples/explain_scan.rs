//! Attributes one test prediction to input channels, ROI voxels and
//! reasoning mechanisms.

use cardiopulm::cohort::{sample_cohort, CohortOptions, RiskWeights, Task};
use cardiopulm::eval::train_variant;
use cardiopulm::explain::{attribute_indicators, attribute_input, project_cardiac_attribution};
use cardiopulm::fusion::Variant;
use cardiopulm::locator::LocatorConfig;
use cardiopulm::pipeline::{build_dataset, desk_training, process_volume, ScanContext};
use cardiopulm::volume::{crop_roi, clip_hu};

fn main() -> cardiopulm::Result<()> {
    let options = CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, ..CohortOptions::default() };
    let cohort = sample_cohort(300, 2, &RiskWeights::default(), &options)?;
    let ctx = ScanContext::shipped(LocatorConfig { roi_extent: [24, 24, 24] }, 1.5);
    let data = build_dataset(&cohort, &ctx)?;
    let split = data.split(2)?;
    let variant = Variant::CardiacLungReasoning;
    let params = train_variant(&data, &split, variant, Task::Screening, &ctx.kb.stamp(), &desk_training())?.params;

    // Highest-risk test subject, so the trace has something to say.
    let record = cohort
        .iter()
        .filter(|r| split.test.contains(&r.subject_id))
        .max_by(|a, b| a.true_risk.total_cmp(&b.true_risk))
        .expect("non-empty test fold");
    let raw = record.scan_volume(0)?;
    let out = process_volume(&raw, &ctx)?;
    let x = out.features.to_input(variant, record.label_screening);
    let attr = attribute_input(&params, &x)?;
    println!(
        "{}: logit {:.3} = baseline {:.3} + cardiac {:.3} + reasoning {:.3} + lung {:.3}",
        record.subject_id, attr.logit, attr.baseline_logit, attr.blocks.cardiac, attr.blocks.reasoning, attr.blocks.lung
    );

    let roi = crop_roi(&clip_hu(&raw)?, &out.roi.roi_box())?;
    let heat = project_cardiac_attribution(&attr, &out.cardiac, &roi)?;
    println!("heat volume {:?}, total {:.4} (cardiac block {:.4})", heat.dims, heat.total(), attr.blocks.cardiac);

    let annotated = attribute_indicators(&attr, &out.trace, &ctx.kb, 3)?;
    println!("{}", annotated.rationale);
    Ok(())
}
