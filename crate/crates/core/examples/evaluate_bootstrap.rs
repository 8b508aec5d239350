//! Subject-level AUC, ROC and bootstrap interval on synthetic scores with
//! two scans per subject.

use cardiopulm::cohort::Task;
use cardiopulm::eval::{evaluate, render_table, Aggregation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cardiopulm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut scans = Vec::new();
    let mut labels = std::collections::BTreeMap::new();
    for s in 0..300 {
        let subject = format!("sub-{s:03}");
        let y = u8::from(rng.random::<f64>() < 0.3);
        for _ in 0..2 {
            let score = rng.random::<f64>() + 0.4 * y as f64;
            scans.push((subject.clone(), score));
        }
        labels.insert(subject, y);
    }
    for rule in [Aggregation::Max, Aggregation::Mean] {
        let report = evaluate(Task::Screening, "synthetic", &scans, &labels, rule, 1000, 7)?;
        println!("aggregation {rule:?}: {} ROC points", report.roc_points.len());
        print!("{}", render_table(&[report]));
    }
    Ok(())
}
