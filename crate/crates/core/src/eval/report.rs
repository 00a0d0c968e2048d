use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use super::{ConfusionCounts, Phases};
use crate::dsp::Condition;
use crate::error::{Error, Result};

/// Experiment families; each gets its own chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Evaluate,
    Sweep,
    Ablation,
    Lle,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Evaluate => "evaluate",
            Family::Sweep => "sweep",
            Family::Ablation => "ablation",
            Family::Lle => "lle",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One CSV row: a subject's accuracy, or a pooled LLE probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub family: Family,
    pub subject_id: Option<u16>,
    pub ratio: f64,
    pub phases: Phases,
    pub condition: Option<Condition>,
    pub n_epochs: usize,
    pub counts: Option<ConfusionCounts>,
    pub accuracy: Option<f64>,
    pub p_lle: Option<f64>,
    pub seed: u64,
}

/// Mean and sample SD of per-subject accuracy within one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub family: Family,
    pub phases: Phases,
    pub ratio: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "experiment,subject_id,ratio,phases,condition,n_epochs,tp,tn,fp,fn,accuracy,p_lle,seed";

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl ExperimentReport {
    pub fn extend(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
    }

    /// Families in order of first appearance.
    pub fn families(&self) -> Vec<Family> {
        let mut out: Vec<Family> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.family) {
                out.push(r.family);
            }
        }
        out
    }

    /// Accuracy summaries grouped by family, phases and ratio.
    pub fn summaries(&self) -> Vec<Summary> {
        let mut keys: Vec<(Family, Phases, f64)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.accuracy.is_some()) {
            let k = (r.family, r.phases, r.ratio);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(family, phases, ratio)| {
                let acc: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| (r.family, r.phases, r.ratio) == (family, phases, ratio))
                    .filter_map(|r| r.accuracy)
                    .collect();
                let (mean, sd) = mean_sd(&acc);
                Summary { family, phases, ratio, n: acc.len(), mean, sd }
            })
            .collect()
    }

    pub fn summary(&self, family: Family, phases: Phases, ratio: f64) -> Option<Summary> {
        self.summaries().into_iter().find(|s| (s.family, s.phases, s.ratio) == (family, phases, ratio))
    }

    pub fn p_lle(&self, condition: Condition) -> Option<f64> {
        self.rows.iter().find(|r| r.family == Family::Lle && r.condition == Some(condition)).and_then(|r| r.p_lle)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let c = r.counts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.family,
                opt(r.subject_id),
                r.ratio,
                r.phases,
                opt(r.condition),
                r.n_epochs,
                opt(c.map(|c| c.tp)),
                opt(c.map(|c| c.tn)),
                opt(c.map(|c| c.fp)),
                opt(c.map(|c| c.fn_)),
                opt(r.accuracy),
                opt(r.p_lle),
                r.seed
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("experiment,phases,ratio,n_subjects,mean_accuracy,sd_accuracy\n");
        for m in self.summaries() {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.family, m.phases, m.ratio, m.n, m.mean, m.sd);
        }
        s
    }
}

/// Mean and sample standard deviation; SD is 0 for fewer than two values.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

struct Plot {
    out: String,
}

impl Plot {
    fn new(title: &str, y_label: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
        let (x0, y0, y1) = (LEFT, H - BOTTOM, TOP);
        let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#, W - RIGHT);
        let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let y = Self::y(v);
            let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, x0 - 7.0, y + 4.0);
        }
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        Plot { out }
    }

    fn y(v: f64) -> f64 {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        H - BOTTOM - v * (H - BOTTOM - TOP)
    }

    fn x_label(&mut self, x: f64, text: &str) {
        let _ = writeln!(self.out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, escape(text));
    }

    fn error_bar(&mut self, x: f64, mean: f64, sd: f64) {
        if sd > 0.0 {
            let (lo, hi) = (Self::y(mean - sd), Self::y(mean + sd));
            let _ = writeln!(self.out, r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="black"/>"#);
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bars with optional SD whiskers.
fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64, f64)]) -> String {
    let mut p = Plot::new(title, y_label);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, (label, value, sd)) in bars.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let top = Plot::y(*value);
        let _ = writeln!(
            p.out,
            r#"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            cx - slot * 0.35,
            slot * 0.7,
            H - BOTTOM - top,
            PALETTE[i % PALETTE.len()]
        );
        p.error_bar(cx, *value, *sd);
        p.x_label(cx, label);
    }
    p.finish()
}

/// One polyline per series over shared x labels.
fn line_chart(title: &str, y_label: &str, xs: &[f64], series: &[(String, Vec<(f64, f64, f64)>)]) -> String {
    let mut p = Plot::new(title, y_label);
    let slot = (W - LEFT - RIGHT) / xs.len().max(1) as f64;
    let x_of = |x: f64| {
        let i = xs.iter().position(|&v| v == x).unwrap_or(0);
        LEFT + slot * (i as f64 + 0.5)
    };
    for &x in xs {
        p.x_label(x_of(x), &format!("{x}"));
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", x_of(x), Plot::y(m))).collect();
        let _ = writeln!(p.out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, coords.join(" "));
        for &(x, m, sd) in pts {
            let _ = writeln!(p.out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, x_of(x), Plot::y(m));
            p.error_bar(x_of(x), m, sd);
        }
        let ly = TOP + 14.0 * k as f64;
        let _ = writeln!(p.out, r#"<text x="{:.2}" y="{ly:.2}" fill="{colour}">phases {}</text>"#, W - RIGHT - 90.0, escape(name));
    }
    p.finish()
}

/// Chart for one family of `report`.
pub fn render_svg(report: &ExperimentReport, family: Family) -> String {
    let sums: Vec<Summary> = report.summaries().into_iter().filter(|s| s.family == family).collect();
    match family {
        Family::Sweep => {
            let mut xs: Vec<f64> = Vec::new();
            let mut series: Vec<(String, Vec<(f64, f64, f64)>)> = Vec::new();
            for s in &sums {
                if !xs.contains(&s.ratio) {
                    xs.push(s.ratio);
                }
                let name = s.phases.to_string();
                match series.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, pts)) => pts.push((s.ratio, s.mean, s.sd)),
                    None => series.push((name, vec![(s.ratio, s.mean, s.sd)])),
                }
            }
            line_chart("Accuracy vs training ratio", "mean accuracy", &xs, &series)
        }
        Family::Ablation => {
            let bars: Vec<(String, f64, f64)> = sums.iter().map(|s| (format!("P{}", s.phases), s.mean, s.sd)).collect();
            bar_chart("Phase ablation", "mean accuracy", &bars)
        }
        Family::Evaluate => {
            let bars: Vec<(String, f64, f64)> = report
                .rows
                .iter()
                .filter(|r| r.family == family)
                .filter_map(|r| Some((opt(r.subject_id), r.accuracy?, 0.0)))
                .collect();
            bar_chart("Per-subject accuracy", "accuracy", &bars)
        }
        Family::Lle => {
            let bars: Vec<(String, f64, f64)> = report
                .rows
                .iter()
                .filter(|r| r.family == family)
                .filter_map(|r| Some((opt(r.condition), r.p_lle?, 0.0)))
                .collect();
            bar_chart("Probability of low listening effort", "P(LLE)", &bars)
        }
    }
}

/// Writes `report.csv`, `summary.csv` and one `<family>.svg` per family
/// into `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![(dir.join("report.csv"), report.to_csv()), (dir.join("summary.csv"), report.summary_csv())];
    for f in report.families() {
        files.push((dir.join(format!("{f}.svg")), render_svg(report, f)));
    }
    let mut written = Vec::with_capacity(files.len());
    for (path, body) in files {
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
