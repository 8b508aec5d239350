//! Subject-level evaluation reports and their text, CSV and SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{auc, bootstrap_ci, roc_curve, RocPoint};
use crate::cohort::Task;
use crate::{Error, Result};

/// Largest gap tolerated between the point AUC and the bootstrap interval
/// before a report is flagged.
pub const CI_SLACK: f64 = 0.02;

/// How scan scores collapse to one score per subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::InvalidArgument(format!("unknown aggregation '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub variant_name: String,
    pub auc: f64,
    pub ci95: (f64, f64),
    pub ci_median: f64,
    pub resamples: usize,
    pub skipped_resamples: usize,
    /// Point AUC lies more than [`CI_SLACK`] outside the interval.
    pub auc_outside_ci: bool,
    pub roc_points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

/// One score per subject, ordered by subject id, so scan order never matters.
pub fn aggregate_subjects(scans: &[(String, f64)], rule: Aggregation) -> Vec<(String, f64)> {
    let mut by_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, v) in scans {
        by_subject.entry(s.as_str()).or_default().push(*v);
    }
    by_subject
        .into_iter()
        .map(|(s, mut v)| {
            v.sort_by(f64::total_cmp);
            let agg = match rule {
                Aggregation::Max => *v.last().expect("nonempty"),
                Aggregation::Mean => v.iter().sum::<f64>() / v.len() as f64,
            };
            (s.to_string(), agg)
        })
        .collect()
}

/// Evaluates `(subject_id, score)` scan predictions against subject labels.
pub fn evaluate(
    task: Task,
    variant_name: &str,
    scans: &[(String, f64)],
    labels: &BTreeMap<String, u8>,
    rule: Aggregation,
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let subjects = aggregate_subjects(scans, rule);
    let mut ids = Vec::with_capacity(subjects.len());
    let mut scores = Vec::with_capacity(subjects.len());
    let mut y = Vec::with_capacity(subjects.len());
    for (s, v) in subjects {
        let l = *labels
            .get(&s)
            .ok_or_else(|| Error::InvalidArgument(format!("no label for subject '{s}'")))?;
        ids.push(s);
        scores.push(v);
        y.push(l);
    }
    let point = auc(&scores, &y)?;
    let ci = bootstrap_ci(&scores, &y, &ids, resamples, seed)?;
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    Ok(EvalReport {
        task,
        variant_name: variant_name.to_string(),
        auc: point,
        ci95: (ci.lo, ci.hi),
        ci_median: ci.median,
        resamples,
        skipped_resamples: ci.skipped,
        auc_outside_ci: point < ci.lo - CI_SLACK || point > ci.hi + CI_SLACK,
        roc_points: roc_curve(&scores, &y)?,
        n_pos,
        n_neg: y.len() - n_pos,
        aggregation: rule,
        seed,
    })
}

/// Plain-text comparison table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.variant_name.len()).max().unwrap_or(7).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<11} {:<width$} {:>6}  {:<17} {:>5} {:>5}", "task", "variant", "AUC", "95% CI", "pos", "neg");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<11} {:<width$} {:>6.3}  [{:.3}, {:.3}]    {:>5} {:>5}",
            r.task.name(),
            r.variant_name,
            r.auc,
            r.ci95.0,
            r.ci95.1,
            r.n_pos,
            r.n_neg
        );
    }
    out
}

pub fn write_reports_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["task", "variant", "auc", "ci_lo", "ci_hi", "n_pos", "n_neg"])?;
    for r in reports {
        w.write_record([
            r.task.name().to_string(),
            r.variant_name.clone(),
            r.auc.to_string(),
            r.ci95.0.to_string(),
            r.ci95.1.to_string(),
            r.n_pos.to_string(),
            r.n_neg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// ROC points of every report in long format.
pub fn write_roc_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["task", "variant", "fpr", "tpr", "threshold"])?;
    for r in reports {
        for p in &r.roc_points {
            w.write_record([
                r.task.name().to_string(),
                r.variant_name.clone(),
                p.fpr.to_string(),
                p.tpr.to_string(),
                p.threshold.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Static SVG line plot of the ROC curves with a legend.
pub fn roc_svg(reports: &[EvalReport], title: &str) -> String {
    let (size, pad) = (400.0, 50.0);
    let total_h = size + 2.0 * pad + 18.0 * reports.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#,
        w = size + 2.0 * pad,
        h = total_h
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, pad + size / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{y0}" x2="{x1}" y2="{pad}" stroke="#999" stroke-dasharray="4 4"/>"##,
        y0 = pad + size,
        x1 = pad + size
    );
    for t in 0..=5 {
        let f = t as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{f:.1}</text>"#,
            pad + f * size,
            pad + size + 16.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{f:.1}</text>"#, pad - 6.0, pad + size - f * size + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#, pad + size / 2.0, pad + size + 34.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">true positive rate</text>"#,
        y = pad + size / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = r
            .roc_points
            .iter()
            .map(|p| format!("{:.2},{:.2}", pad + p.fpr * size, pad + size - p.tpr * size))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let y = pad + size + 50.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, pad + 20.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{} ({}) AUC {:.3}</text>"#,
            pad + 26.0,
            y + 4.0,
            escape(&r.variant_name),
            r.task.name(),
            r.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scans() -> Vec<(String, f64)> {
        (0..40)
            .flat_map(|s| {
                let base = s as f64 / 40.0;
                [(format!("s{s:02}"), base), (format!("s{s:02}"), base * 0.5)]
            })
            .collect()
    }

    fn labels() -> BTreeMap<String, u8> {
        (0..40).map(|s| (format!("s{s:02}"), (s >= 30 || s % 7 == 0) as u8)).collect()
    }

    #[test]
    fn scan_order_does_not_matter() {
        let mut a = scans();
        let r1 = evaluate(Task::Screening, "v", &a, &labels(), Aggregation::Max, 200, 3).unwrap();
        a.reverse();
        let r2 = evaluate(Task::Screening, "v", &a, &labels(), Aggregation::Max, 200, 3).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.n_pos + r1.n_neg, 40);
        assert!(r1.ci95.0 <= r1.ci_median && r1.ci_median <= r1.ci95.1);
    }

    #[test]
    fn mean_and_max_aggregate() {
        let s = vec![("a".to_string(), 0.2), ("a".to_string(), 0.6), ("b".to_string(), 0.1)];
        assert_eq!(aggregate_subjects(&s, Aggregation::Max), vec![("a".into(), 0.6), ("b".into(), 0.1)]);
        assert_eq!(aggregate_subjects(&s, Aggregation::Mean)[0].1, 0.4);
    }

    #[test]
    fn renderings() {
        let r = evaluate(Task::Mortality, "cardiac_only", &scans(), &labels(), Aggregation::Max, 100, 1).unwrap();
        let t = render_table(std::slice::from_ref(&r));
        assert!(t.contains("mortality") && t.contains("cardiac_only"));
        let svg = roc_svg(&[r.clone()], "ROC <test>");
        assert!(svg.starts_with("<svg") && svg.contains("&lt;test&gt;") && svg.contains("polyline"));
        let dir = tempfile::tempdir().unwrap();
        write_roc_csv(&[r.clone()], dir.path().join("roc.csv")).unwrap();
        write_reports_csv(&[r], dir.path().join("r.csv")).unwrap();
    }
}
