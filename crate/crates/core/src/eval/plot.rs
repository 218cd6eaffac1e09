//! Static SVG charts of experiment reports. Output depends only on the
//! report, so identical reports give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{BoxStats, ClassReport, ExperimentReport};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 64.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One rendered chart.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlotFile {
    pub name: String,
    pub svg: String,
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            (W - RIGHT + LEFT) / 2.0,
            escape(title)
        );
        Self { out }
    }

    fn px(x: f64) -> f64 {
        LEFT + x * (W - LEFT - RIGHT)
    }

    fn py(y: f64) -> f64 {
        H - BOTTOM - y * (H - TOP - BOTTOM)
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.out,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{stroke}"{extra}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.out, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#, escape(s));
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#
        );
    }

    /// Axes on the unit square with `ticks` labels on y mapped by `label`.
    fn axes(&mut self, xlabel: &str, ylabel: &str, ylabel_at: impl Fn(f64) -> String) {
        self.line(Self::px(0.0), Self::py(0.0), Self::px(1.0), Self::py(0.0), "black", "");
        self.line(Self::px(0.0), Self::py(0.0), Self::px(0.0), Self::py(1.0), "black", "");
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            self.line(Self::px(-0.01), Self::py(t), Self::px(0.0), Self::py(t), "black", "");
            self.text(Self::px(0.0) - 4.0, Self::py(t) + 4.0, "end", &ylabel_at(t));
        }
        self.text(Self::px(0.5), H - 16.0, "middle", xlabel);
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            Self::py(0.5),
            Self::py(0.5),
            escape(ylabel)
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (name, c)) in entries.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let x = W - RIGHT + 12.0;
            self.rect(x, y - 9.0, 10.0, 10.0, c);
            self.text(x + 16.0, y, "start", name);
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn roc_plot(scenario: &str, classes: &[&ClassReport]) -> PlotFile {
    let mut c = Canvas::new(&format!("ROC: {scenario}"));
    c.axes("false positive rate", "true positive rate", |t| format!("{t:.2}"));
    c.line(Canvas::px(0.0), Canvas::py(0.0), Canvas::px(1.0), Canvas::py(1.0), "#999999", r#" stroke-dasharray="4 3""#);
    let mut legend = Vec::new();
    for (i, r) in classes.iter().enumerate() {
        let pts: Vec<String> = r
            .roc
            .roc_points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", Canvas::px(x), Canvas::py(y)))
            .collect();
        let _ = writeln!(
            c.out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
        legend.push((format!("{}/{} {:.3}", r.profile, r.class, r.roc.auroc), color(i)));
    }
    c.legend(&legend);
    PlotFile {
        name: format!("roc_{scenario}.svg"),
        svg: c.finish(),
    }
}

fn box_plot(scenario: &str, classes: &[&ClassReport]) -> PlotFile {
    // The ID box of each profile, then one box per OoD class.
    let mut boxes: Vec<(String, BoxStats)> = Vec::new();
    for r in classes {
        let id_name = format!("{}/id", r.profile);
        if !boxes.iter().any(|(n, _)| *n == id_name) {
            boxes.push((id_name, r.box_id));
        }
        boxes.push((format!("{}/{}", r.profile, r.class), r.box_ood));
    }
    let lo = boxes.iter().map(|(_, b)| b.min).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|(_, b)| b.max).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let norm = |v: f64| (v - lo) / span;
    let mut c = Canvas::new(&format!("Scores: {scenario}"));
    c.axes("class", "score", |t| format!("{:.3}", lo + t * span));
    let slot = 1.0 / boxes.len() as f64;
    for (i, (name, b)) in boxes.iter().enumerate() {
        let mid = Canvas::px((i as f64 + 0.5) * slot);
        let half = 0.3 * slot * (W - LEFT - RIGHT);
        let fill = if name.ends_with("/id") { "#cfe3f5" } else { "#f6cccc" };
        c.line(mid, Canvas::py(norm(b.min)), mid, Canvas::py(norm(b.max)), "black", "");
        c.rect(mid - half, Canvas::py(norm(b.q3)), 2.0 * half, Canvas::py(norm(b.q1)) - Canvas::py(norm(b.q3)), fill);
        c.line(mid - half, Canvas::py(norm(b.median)), mid + half, Canvas::py(norm(b.median)), "black", r#" stroke-width="2""#);
        c.text(mid, H - BOTTOM + 16.0, "middle", name);
    }
    PlotFile {
        name: format!("scores_{scenario}.svg"),
        svg: c.finish(),
    }
}

fn bar_plot(report: &ExperimentReport) -> PlotFile {
    let scenarios: Vec<&str> = report
        .scenarios
        .iter()
        .filter(|s| !s.classes.is_empty())
        .map(|s| s.name.as_str())
        .collect();
    let mut keys: Vec<String> = Vec::new();
    for r in report.class_reports() {
        let k = format!("{}/{}", r.profile, r.class);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut c = Canvas::new("AUROC by class");
    c.axes("class", "AUROC", |t| format!("{t:.2}"));
    let group = 1.0 / keys.len() as f64;
    let bar = 0.8 * group / scenarios.len() as f64;
    for (g, key) in keys.iter().enumerate() {
        for (j, s) in scenarios.iter().enumerate() {
            let Some(r) = report
                .class_reports()
                .find(|r| r.scenario == *s && format!("{}/{}", r.profile, r.class) == *key)
            else {
                continue;
            };
            let x0 = g as f64 * group + 0.1 * group + j as f64 * bar;
            let top = Canvas::py(r.roc.auroc);
            c.rect(Canvas::px(x0), top, bar * (W - LEFT - RIGHT), Canvas::py(0.0) - top, color(j));
        }
        c.text(Canvas::px((g as f64 + 0.5) * group), H - BOTTOM + 16.0, "middle", key);
    }
    let legend: Vec<(String, &str)> = scenarios.iter().enumerate().map(|(j, s)| (s.to_string(), color(j))).collect();
    c.legend(&legend);
    PlotFile {
        name: "auroc_by_class.svg".into(),
        svg: c.finish(),
    }
}

/// ROC curves and score box plots per scenario, plus grouped AUROC bars
/// when two or more scenarios report.
pub fn emit_plots(report: &ExperimentReport) -> Result<Vec<PlotFile>> {
    if report.class_reports().next().is_none() {
        return Err(Error::Empty("no class reports to plot".into()));
    }
    let mut files = Vec::new();
    let mut reporting = 0;
    for s in &report.scenarios {
        let classes: Vec<&ClassReport> = s.classes.iter().collect();
        if classes.is_empty() {
            continue;
        }
        reporting += 1;
        files.push(roc_plot(&s.name, &classes));
        files.push(box_plot(&s.name, &classes));
    }
    if reporting >= 2 {
        files.push(bar_plot(report));
    }
    Ok(files)
}

/// Write plots into `dir`, returning their paths.
pub fn write_plots(files: &[PlotFile], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|f| {
            let path = dir.join(&f.name);
            fs::write(&path, &f.svg).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
