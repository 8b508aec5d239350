//! Estimates the 1 to 6 year lung-risk trajectory from finding scores, and
//! loads one from a CSV file with repair of a non-monotone row.

use std::io::Write;

use cardiopulm::lungrisk::{estimate_trajectory, load_trajectory_file, SurrogateParams};
use cardiopulm::perception::{filter_findings, Finding, FindingSource, ScoredFinding};

fn main() -> cardiopulm::Result<()> {
    let params = SurrogateParams::shipped();
    for nodule in [0.0, 0.5, 0.9] {
        let raw = [ScoredFinding { name: Finding::Nodule, score: nodule }];
        let t = estimate_trajectory(&filter_findings(&raw, FindingSource::File)?, &params);
        let ys: Vec<String> = t.values.iter().map(|y| format!("{y:.4}")).collect();
        println!("nodule {nodule:.1}: {}", ys.join(" "));
    }

    let mut file = tempfile::NamedTempFile::new().expect("temp file");
    writeln!(file, "scan_id,y1,y2,y3,y4,y5,y6\nscan-a,0.01,0.02,0.015,0.03,0.04,0.05").expect("write");
    let repaired = load_trajectory_file(file.path(), "scan-a", true)?;
    println!("repaired file row: {:?}", repaired.values);
    println!("without repair: {}", load_trajectory_file(file.path(), "scan-a", false).unwrap_err());
    Ok(())
}
