use std::fmt::Write as _;

use crate::ablation::AblationRow;
use crate::metrics::{MetricSettings, MetricsReport};

/// Flat `key = value` report. Millimeter quantities use three decimals,
/// fractions four.
pub fn format_report(report: &MetricsReport, settings: &MetricSettings) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
    kv("frames_evaluated", report.frames_evaluated.to_string());
    kv("frames_unannotated", report.frames_unannotated.to_string());
    kv("joint_count", report.joint_count.to_string());
    kv("mepe_mm", format!("{:.3}", report.mepe_mm));
    kv("mepe_ra_mm", format!("{:.3}", report.mepe_ra_mm));
    kv("max_threshold_mm", format!("{:.3}", settings.max_threshold_mm));
    kv("max_threshold_ra_mm", format!("{:.3}", settings.max_threshold_ra_mm));
    kv("auc", format!("{:.4}", report.auc));
    kv("auc_ra", format!("{:.4}", report.auc_ra));
    for (t, f) in &report.pck_curve {
        kv(&format!("pck_at_{t:.3}_mm"), format!("{f:.4}"));
    }
    for (t, f) in &report.pck_curve_ra {
        kv(&format!("pck_ra_at_{t:.3}_mm"), format!("{f:.4}"));
    }
    s
}

/// CSV table, centimeters with four decimals.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::from("configuration,mean_cm,std_cm,frames_annotated,frames_total\n");
    for r in rows {
        writeln!(s, "{},{:.4},{:.4},{},{}", r.name, r.mean_cm, r.std_cm, r.frames_annotated, r.frames_total).expect("string write");
    }
    s
}
