//! Benchmark report files: CSV tables, JSON and static SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::protocol::{BenchResult, MethodSummary};
use crate::error::{Error, Result};
use crate::metrics::ReliabilityBin;

pub const RESULTS_CSV_HEADER: &str =
    "train,test,method,cutoff,label_fraction,accuracy,miou,iou,ece,nll,brier";
pub const SUMMARY_CSV_HEADER: &str = "method,cutoff,n_settings,accuracy,accuracy_std,miou,miou_std,iou,iou_std,ece,ece_std,nll,nll_std,brier,brier_std";

/// Rendered report: relative paths and their bytes, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl ReportFiles {
    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p == Path::new(path))
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file under `dir` and returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn cutoff_field(c: Option<u32>) -> String {
    c.map_or_else(|| "full".to_string(), |d| d.to_string())
}

pub fn results_csv(result: &BenchResult) -> String {
    let mut out = String::from(RESULTS_CSV_HEADER);
    out.push('\n');
    for s in &result.settings {
        let m = &s.metrics;
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.train_year,
            s.test_year,
            s.method,
            cutoff_field(s.cutoff),
            s.label_fraction,
            m.accuracy,
            m.miou,
            m.iou,
            m.ece,
            m.nll,
            m.brier
        )
        .expect("write to string");
    }
    out
}

pub fn summary_csv(result: &BenchResult) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in &result.summaries {
        let (m, d) = (&s.mean, &s.std);
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.method,
            cutoff_field(s.cutoff),
            s.n_settings,
            m.accuracy,
            d.accuracy,
            m.miou,
            d.miou,
            m.iou,
            d.iou,
            m.ece,
            d.ece,
            m.nll,
            d.nll,
            m.brier,
            d.brier
        )
        .expect("write to string");
    }
    out
}

/// Reliability bins of one method pooled over its full-season settings.
pub fn pooled_reliability(result: &BenchResult, method: &str) -> Vec<ReliabilityBin> {
    let full: Vec<_> = result
        .settings
        .iter()
        .filter(|s| s.method == method && s.cutoff.is_none())
        .collect();
    let Some(first) = full.first() else {
        return Vec::new();
    };
    let mut bins: Vec<ReliabilityBin> = first
        .report
        .reliability_bins
        .iter()
        .map(|b| ReliabilityBin {
            mean_confidence: 0.0,
            accuracy: 0.0,
            count: 0,
            ..b.clone()
        })
        .collect();
    for s in &full {
        for (acc, b) in bins.iter_mut().zip(&s.report.reliability_bins) {
            acc.mean_confidence += b.mean_confidence * b.count as f64;
            acc.accuracy += b.accuracy * b.count as f64;
            acc.count += b.count;
        }
    }
    for b in &mut bins {
        if b.count > 0 {
            b.mean_confidence /= b.count as f64;
            b.accuracy /= b.count as f64;
        }
    }
    bins
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 50.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }
}

fn svg_frame(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    axes: &Axes,
    xticks: &[f64],
    yticks: &[f64],
) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{title}</text>"#,
        W / 2.0
    )
    .unwrap();
    let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
    writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for &t in xticks {
        let x = axes.px(t);
        writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            y0 + 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            fmt_tick(t)
        )
        .unwrap();
    }
    for &t in yticks {
        let y = axes.py(t);
        writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/>"#,
            x0 - 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(t)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    )
    .unwrap();
    s
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn polyline(s: &mut String, axes: &Axes, points: &[(f64, f64)], color: &str) {
    let pts: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
        .collect();
    writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        pts.join(" ")
    )
    .unwrap();
    for p in &pts {
        let (x, y) = p.split_once(',').expect("point");
        writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#).unwrap();
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = PAD + 4.0 + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{color}"/>"#,
            PAD + 8.0,
            y
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            PAD + 22.0,
            y + 4.0,
            xml_escape(name)
        )
        .unwrap();
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn reliability_svg(result: &BenchResult) -> String {
    let axes = Axes {
        x: (0.0, 1.0),
        y: (0.0, 1.0),
    };
    let ticks = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut s = svg_frame(
        "Reliability (full season)",
        "confidence",
        "accuracy",
        &axes,
        &ticks,
        &ticks,
    );
    writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        axes.px(0.0),
        axes.py(0.0),
        axes.px(1.0),
        axes.py(1.0)
    )
    .unwrap();
    let names: Vec<&str> = result.methods.iter().map(|m| m.name.as_str()).collect();
    for (i, name) in names.iter().enumerate() {
        let points: Vec<(f64, f64)> = pooled_reliability(result, name)
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.mean_confidence, b.accuracy))
            .collect();
        if !points.is_empty() {
            polyline(&mut s, &axes, &points, PALETTE[i % PALETTE.len()]);
        }
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Fold-averaged accuracy per cutoff; the full season is drawn at day 365.
pub fn accuracy_vs_cutoff_svg(result: &BenchResult) -> String {
    let day = |s: &MethodSummary| s.cutoff.map_or(365.0, f64::from);
    let days: Vec<f64> = result.summaries.iter().map(day).collect();
    let x0 = days
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(120.0);
    let axes = Axes {
        x: (x0 - 10.0, 375.0),
        y: (0.0, 1.0),
    };
    let mut xticks: Vec<f64> = days.clone();
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    let mut s = svg_frame(
        "Accuracy by season cutoff",
        "cutoff (day of year)",
        "accuracy",
        &axes,
        &xticks,
        &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
    );
    let names: Vec<&str> = result.methods.iter().map(|m| m.name.as_str()).collect();
    for (i, name) in names.iter().enumerate() {
        let mut points: Vec<(f64, f64)> = result
            .summaries
            .iter()
            .filter(|m| m.method == *name)
            .map(|m| (day(m), m.mean.accuracy))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !points.is_empty() {
            polyline(&mut s, &axes, &points, PALETTE[i % PALETTE.len()]);
        }
    }
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

pub fn results_json(result: &BenchResult) -> Result<String> {
    serde_json::to_string_pretty(result)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse {
            what: "benchmark result".into(),
            detail: e.to_string(),
        })
}

/// Renders all report files. Output bytes depend only on `result`.
pub fn render_report(result: &BenchResult) -> Result<ReportFiles> {
    result.check()?;
    Ok(ReportFiles {
        files: vec![
            ("results.csv".into(), results_csv(result).into_bytes()),
            ("summary.csv".into(), summary_csv(result).into_bytes()),
            ("results.json".into(), results_json(result)?.into_bytes()),
            (
                "plots/reliability.svg".into(),
                reliability_svg(result).into_bytes(),
            ),
            (
                "plots/accuracy_vs_cutoff.svg".into(),
                accuracy_vs_cutoff_svg(result).into_bytes(),
            ),
        ],
    })
}
