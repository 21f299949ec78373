//! Per-axis scatter of predicted against true translation, as CSV and SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{format_err, IoContext, Result};
use crate::eval::EvalReport;

const AXES: [&str; 3] = ["x", "y", "z"];

/// One row per pair and axis: `id,axis,true_mm,predicted_mm,error_mm`.
pub fn offsets_csv(report: &EvalReport) -> String {
    let mut s = String::from("id,axis,true_mm,predicted_mm,error_mm\n");
    for r in &report.pairs {
        let Some(t) = r.true_translation_mm else { continue };
        for (a, name) in AXES.iter().enumerate() {
            let p = r.predicted_translation_mm[a];
            let _ = writeln!(s, "{},{},{},{},{}", r.id, name, t[a], p, p - t[a]);
        }
    }
    s
}

/// Three panels of predicted versus true translation with the identity line.
pub fn offsets_svg(report: &EvalReport) -> String {
    let pts: Vec<([f64; 3], [f64; 3])> =
        report.pairs.iter().filter_map(|r| r.true_translation_mm.map(|t| (t, r.predicted_translation_mm))).collect();
    let lim = pts
        .iter()
        .flat_map(|(t, p)| t.iter().chain(p.iter()))
        .fold(1.0f64, |m, v| m.max(v.abs()))
        .ceil();
    let (panel, pad) = (240.0, 30.0);
    let width = 3.0 * (panel + pad) + pad;
    let height = panel + 2.0 * pad + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    for (a, name) in AXES.iter().enumerate() {
        let x0 = pad + a as f64 * (panel + pad);
        let y0 = pad;
        let map = |v: f64| (v + lim) / (2.0 * lim) * panel;
        let _ = writeln!(s, r##"<rect x="{x0}" y="{y0}" width="{panel}" height="{panel}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{}" x2="{}" y2="{y0}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            y0 + panel,
            x0 + panel
        );
        for (t, p) in &pts {
            let cx = x0 + map(t[a]);
            let cy = y0 + panel - map(p[a]);
            let _ = writeln!(s, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="#1f77b4" fill-opacity="0.75"/>"##);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{name}: true vs predicted (mm, ±{lim})</text>"#,
            x0 + panel / 2.0,
            y0 + panel + 18.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn write_offset_plots(report: &EvalReport, stem: &Path) -> Result<()> {
    if report.pairs.iter().all(|r| r.true_translation_mm.is_none()) {
        return Err(format_err(stem, "report has no ground-truth translations to plot"));
    }
    let csv = stem.with_extension("csv");
    std::fs::write(&csv, offsets_csv(report)).at(&csv)?;
    let svg = stem.with_extension("svg");
    std::fs::write(&svg, offsets_svg(report)).at(&svg)
}
