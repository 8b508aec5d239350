//! Refits the perception calibration on a phantom severity grid and prints
//! the resulting constants file to stdout.
//!
//! ```text
//! cargo run --release --example calibrate_perception > assets/perception_calibration.json
//! ```

use cardiopulm::perception::calibration::{fit_calibration, measure_grid};
use cardiopulm::perception::Finding;

fn main() -> cardiopulm::Result<()> {
    let levels = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    let seeds: Vec<u64> = (100..106).collect();
    let grid = measure_grid([96, 96, 96], &levels, &seeds)?;
    let cal = fit_calibration(&grid, "perception-cal-1");
    for f in Finding::ALL {
        let pts: Vec<_> = grid.iter().filter(|g| g.finding == f).collect();
        eprintln!("{f}:");
        for &s in &levels {
            let stats: Vec<f64> = pts.iter().filter(|g| g.severity == s).map(|g| g.stat).collect();
            let mean = stats.iter().sum::<f64>() / stats.len() as f64;
            eprintln!("  severity {s:.1}: stat {mean:.5} -> score {:.3}", cal.score(f, mean));
        }
    }
    println!("{}", serde_json::to_string_pretty(&cal)?);
    Ok(())
}
