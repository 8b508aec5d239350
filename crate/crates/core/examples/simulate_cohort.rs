//! Samples a small phantom cohort and reports its label prevalence and the
//! AUC an oracle that knows the true risk would reach.

use cardiopulm::cohort::{bayes_optimal_auc, sample_cohort, CohortOptions, RiskWeights, Task};

fn main() -> cardiopulm::Result<()> {
    let options = CohortOptions {
        dims: [48, 48, 48],
        heart_jitter: 1.0,
        ..CohortOptions::default()
    };
    let cohort = sample_cohort(1000, 7, &RiskWeights::default(), &options)?;
    for task in Task::ALL {
        let pos = cohort.iter().filter(|r| r.label(task) == 1).count();
        println!(
            "{:<10} prevalence {:.3}  oracle AUC {:.3}",
            task.name(),
            pos as f64 / cohort.len() as f64,
            bayes_optimal_auc(&cohort, task)?
        );
    }
    let first = &cohort[0];
    println!(
        "{}: true risk {:.3}, heart centre {:?}",
        first.subject_id, first.true_risk, first.spec.heart_center
    );
    Ok(())
}
