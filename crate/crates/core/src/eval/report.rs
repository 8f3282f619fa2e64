//! CSV and SVG serialisation of an [`EvalReport`].
//!
//! - `report.csv`: `metric,value` rows
//! - `roc.csv`: `threshold,fpr,tpr` over the pooled distances of all folds
//! - `roc_folds.csv`: `fold,threshold,fpr,tpr`
//! - `confusion.csv`: `true,<target names...>,Novel`, row proportions summed over folds
//! - `roc.svg`: line plot of the pooled ROC

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EvalReport, RocCurve};
use crate::error::Result;

pub const REPORT_FILES: [&str; 5] = ["report.csv", "roc.csv", "roc_folds.csv", "confusion.csv", "roc.svg"];

/// Writes every report file into `dir`, creating it if needed.
pub fn write_report_dir(report: &EvalReport, dir: impl AsRef<Path>, svg: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record(["metric", "value"])?;
    let mut row = |k: String, v: String| w.write_record([k, v]);
    row("method".into(), report.method.to_string())?;
    row("folds".into(), report.folds.len().to_string())?;
    row("tpr_goal".into(), report.tpr_goal.to_string())?;
    row("auc_mean".into(), report.auc.to_string())?;
    row("auc_correct_label_mean".into(), report.auc_correct_label.to_string())?;
    row("target_accuracy_mean".into(), report.target_accuracy.to_string())?;
    row("tpr_at_threshold_mean".into(), report.tpr_at_threshold.to_string())?;
    row("novel_detection_mean".into(), report.novel_detection.to_string())?;
    for (name, acc) in report.novel_names.iter().zip(&report.per_novel_detection) {
        row(format!("novel_detection_{name}"), acc.to_string())?;
    }
    for f in &report.folds {
        let i = f.fold;
        row(format!("fold{i}_auc"), f.auc.to_string())?;
        row(format!("fold{i}_auc_correct_label"), f.auc_correct_label.to_string())?;
        row(format!("fold{i}_target_accuracy"), f.target_accuracy.to_string())?;
        row(format!("fold{i}_threshold"), f.threshold.to_string())?;
        row(format!("fold{i}_tpr_at_threshold"), f.tpr_at_threshold.to_string())?;
        row(format!("fold{i}_tpr_correct_at_threshold"), f.tpr_correct_at_threshold.to_string())?;
        row(format!("fold{i}_novel_detection"), f.novel_detection.to_string())?;
        row(format!("fold{i}_train_accuracy"), f.train_accuracy.to_string())?;
    }
    w.flush()?;

    let pooled = report.pooled_roc()?;
    let mut w = csv::Writer::from_path(dir.join("roc.csv"))?;
    w.write_record(["threshold", "fpr", "tpr"])?;
    for p in &pooled.points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("roc_folds.csv"))?;
    w.write_record(["fold", "threshold", "fpr", "tpr"])?;
    for f in &report.folds {
        for p in &f.roc.points {
            w.write_record([f.fold.to_string(), p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
    let mut header = vec!["true".to_string()];
    header.extend(report.target_names.iter().cloned());
    header.push("Novel".into());
    w.write_record(&header)?;
    let names = report.target_names.iter().chain(&report.novel_names);
    for (name, props) in names.zip(report.confusion.proportions()) {
        let mut rec = vec![name.clone()];
        rec.extend(props.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    if svg {
        fs::write(dir.join("roc.svg"), render_roc_svg(&pooled, &format!("{} AUC {:.3}", report.method, report.auc)))?;
    }
    Ok(())
}

/// Minimal standalone SVG of a ROC curve.
pub fn render_roc_svg(curve: &RocCurve, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let x = |fpr: f64| PAD + fpr * (SIZE - 2.0 * PAD);
    let y = |tpr: f64| SIZE - PAD - tpr * (SIZE - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{w}" height="{w}" fill="none" stroke="black"/>"#,
        w = SIZE - 2.0 * PAD
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let pts: Vec<String> = curve.points.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">FPR</text>"#, SIZE / 2.0, SIZE - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {})">TPR</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, SIZE / 2.0, escape(title));
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
