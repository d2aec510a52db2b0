// SPDX-License-Identifier: Apache-2.0

//! Safety/preservation trade-off scatter.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::run::MethodReport;
use super::write_file;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub method: String,
    pub preservation: f64,
    /// `None` when the baseline never flags.
    pub relative_improvement: Option<f64>,
    pub unsafe_rate: f64,
}

pub fn tradeoff_points(reports: &[MethodReport], scenario: &str) -> Vec<TradeoffPoint> {
    reports
        .iter()
        .filter(|r| r.report.scenario == scenario)
        .map(|r| TradeoffPoint {
            method: r.report.method.clone(),
            preservation: r.report.preservation_mean,
            relative_improvement: r.report.relative_improvement,
            unsafe_rate: r.report.unsafe_rate,
        })
        .collect()
}

pub fn tradeoff_csv(points: &[TradeoffPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| Error::contract(format!("tradeoff csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(format!("tradeoff csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG scatter: preservation distance on a reversed x axis (zero at
/// the right), relative improvement on y, so better methods sit further to
/// the upper right. Undefined improvements are drawn at 0.
pub fn tradeoff_svg(points: &[TradeoffPoint], title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 56.0;
    let x_max = points.iter().map(|p| p.preservation).fold(0.0, f64::max).max(1e-9) * 1.1;
    let ys: Vec<f64> = points.iter().map(|p| p.relative_improvement.unwrap_or(0.0)).collect();
    let y_min = ys.iter().copied().fold(0.0, f64::min);
    let y_max = ys.iter().copied().fold(1.0, f64::max);
    let px = |x: f64| M + (x_max - x) / x_max * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y_min) / (y_max - y_min) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (M, W - M, H - M, M);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x1}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let xv = x_max * k as f64 / 4.0;
        let yv = y_min + (y_max - y_min) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, px(xv), y0 + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="start">{yv:.2}</text>"#, x1 + 6.0, py(yv) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">preservation distance (reversed)</text>"#,
        W / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">relative improvement</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (p, y) in points.iter().zip(&ys) {
        let (cx, cy) = (px(p.preservation), py(*y));
        let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, cx + 6.0, cy - 6.0, escape(&p.method));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `tradeoff_<scenario>.csv` and `.svg`; returns their relative paths.
pub fn emit_tradeoff_plot(reports: &[MethodReport], scenario: &str, out_dir: &Path) -> Result<(String, String)> {
    let points = tradeoff_points(reports, scenario);
    if points.len() < 2 {
        return Err(Error::config(format!(
            "trade-off plot for scenario '{scenario}' needs at least 2 methods, found {}",
            points.len()
        )));
    }
    let stem: String = scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    let csv_rel = format!("tradeoff_{stem}.csv");
    let svg_rel = format!("tradeoff_{stem}.svg");
    write_file(&out_dir.join(&csv_rel), tradeoff_csv(&points)?.as_bytes())?;
    write_file(&out_dir.join(&svg_rel), tradeoff_svg(&points, scenario).as_bytes())?;
    Ok((csv_rel, svg_rel))
}
