//! Scores the five pulmonary findings on phantoms of rising severity.

use cardiopulm::cohort::{generate_phantom, PhantomSpec};
use cardiopulm::locator::{body_mask, lung_mask};
use cardiopulm::perception::{score_findings, Finding};
use cardiopulm::volume::clip_hu;

fn main() -> cardiopulm::Result<()> {
    for severity in [0.0, 0.3, 0.6, 0.9] {
        let mut spec = PhantomSpec::standard(5, [96, 96, 96]);
        for f in Finding::ALL {
            spec = spec.with_severity(f, severity);
        }
        let v = clip_hu(&generate_phantom(&spec)?)?;
        let body = body_mask(&v)?;
        let set = score_findings(&v, &lung_mask(&v, &body)?)?;
        let scores: Vec<String> = set
            .findings()
            .iter()
            .map(|f| format!("{} {:.2}", f.name, f.score))
            .collect();
        println!("severity {severity:.1}: {} | retained {:?}", scores.join(", "), set.retained());
    }
    Ok(())
}
