//! Report tables and static SVG figures.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::evidence::ImportanceReport;
use crate::kinematics::SpeedHistogram;

pub type Result<T> = std::result::Result<T, csv::Error>;

/// Serialise rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
}

/// One bin of `hist.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub density: f64,
    /// KDE at the bin centre.
    pub kde: f64,
}

fn kde_at(kde: &[(f64, f64)], x: f64) -> f64 {
    let i = kde.partition_point(|p| p.0 < x);
    match (i.checked_sub(1).and_then(|j| kde.get(j)), kde.get(i)) {
        (Some(a), Some(b)) if b.0 > a.0 => a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0),
        (_, Some(b)) => b.1,
        (Some(a), None) => a.1,
        (None, None) => 0.0,
    }
}

pub fn hist_rows(h: &SpeedHistogram) -> Vec<HistRow> {
    h.bins
        .iter()
        .map(|b| HistRow { bin_lo: b.lo, bin_hi: b.hi, count: b.count, density: b.density, kde: kde_at(&h.kde, 0.5 * (b.lo + b.hi)) })
        .collect()
}

/// One row of `importance.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub participant_id: String,
    pub outcome: String,
    pub feature: String,
    pub log_odds: f64,
    pub log10_odds: f64,
    pub mc_se: f64,
    pub full_log_evidence: f64,
    pub error: String,
}

pub fn importance_rows(participant_id: &str, outcome: &str, report: &ImportanceReport) -> Vec<ImportanceRow> {
    report
        .features
        .iter()
        .map(|f| ImportanceRow {
            participant_id: participant_id.to_owned(),
            outcome: outcome.to_owned(),
            feature: f.feature_name.clone(),
            log_odds: f.log_odds,
            log10_odds: f.log10_odds,
            mc_se: f.mc_se,
            full_log_evidence: report.full.log_evidence,
            error: f.error.clone().unwrap_or_default(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

const W: f64 = 720.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 72.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick step (1, 2 or 5 times a power of ten).
fn nice_step(span: f64, target: usize) -> f64 {
    if !(span > 0.0) {
        return 1.0;
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let n = raw / mag;
    let m = if n <= 1.0 { 1.0 } else if n <= 2.0 { 2.0 } else if n <= 5.0 { 5.0 } else { 10.0 };
    m * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let v = if v.abs() < 1e-9 * step { 0.0 } else { v };
    format!("{v:.decimals$}")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }
    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(title)
    );
}

fn y_axis(svg: &mut String, f: &Frame, label: &str) {
    let step = nice_step(f.y1 - f.y0, 6);
    let mut v = (f.y0 / step).ceil() * step;
    while v <= f.y1 + 1e-9 * step {
        let y = f.py(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{ML}\" x2=\"{:.1}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            W - MR,
            ML - 6.0,
            y + 4.0,
            fmt_tick(v, step)
        );
        v += step;
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" x2=\"{ML}\" y1=\"{MT}\" y2=\"{:.1}\" stroke=\"black\"/>\n<text transform=\"translate(16 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        H - MB,
        (MT + H - MB) / 2.0,
        esc(label)
    );
}

/// Histogram bars with the KDE overlaid.
pub fn histogram_svg(h: &SpeedHistogram, title: &str) -> String {
    let x1 = h.bins.last().map_or(1.0, |b| b.hi);
    let y_max = h
        .bins
        .iter()
        .map(|b| b.density)
        .chain(h.kde.iter().map(|p| p.1))
        .fold(0.0f64, f64::max);
    let f = Frame { x0: 0.0, x1, y0: 0.0, y1: if y_max > 0.0 { y_max * 1.1 } else { 1.0 } };
    let mut svg = String::new();
    open(&mut svg, title);
    y_axis(&mut svg, &f, "density");
    for b in &h.bins {
        let (xa, xb) = (f.px(b.lo), f.px(b.hi));
        let (ya, yb) = (f.py(b.density), f.py(0.0));
        let _ = writeln!(
            svg,
            "<rect x=\"{xa:.1}\" y=\"{ya:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\"/>",
            (xb - xa).max(0.0),
            (yb - ya).max(0.0)
        );
    }
    if !h.kde.is_empty() {
        let pts: Vec<String> = h.kde.iter().map(|&(x, d)| format!("{:.1},{:.1}", f.px(x), f.py(d))).collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
    }
    let step = nice_step(x1, 8);
    let mut v = 0.0;
    while v <= x1 + 1e-9 {
        let x = f.px(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" x2=\"{x:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/><text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            fmt_tick(v, step)
        );
        v += step;
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">gaze speed (deg/s)</text>",
        W - MR,
        H - MB,
        H - MB,
        (ML + W - MR) / 2.0,
        H - MB + 38.0
    );
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">n = {}, bandwidth {:.2}</text>", W - MR, MT + 4.0, h.n, h.bandwidth);
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bar chart: one group per entry of `groups`, one bar per series.
/// `values[g][s]`; non-finite values are left out.
pub fn grouped_bars_svg(title: &str, y_label: &str, groups: &[String], series: &[String], values: &[Vec<f64>]) -> String {
    let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let pad = 0.08 * (hi - lo).max(1e-3);
    let f = Frame {
        x0: 0.0,
        x1: groups.len().max(1) as f64,
        y0: if lo < 0.0 { lo - pad } else { 0.0 },
        y1: if hi > 0.0 { hi + pad } else { pad },
    };
    let mut svg = String::new();
    open(&mut svg, title);
    y_axis(&mut svg, &f, y_label);
    let zero = f.py(0.0);
    let group_w = (W - ML - MR) / groups.len().max(1) as f64;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = ML + g as f64 * group_w + 0.1 * group_w;
        for (s, v) in values.get(g).into_iter().flatten().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let y = f.py(*v);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{}: {v:.4}</title></rect>",
                gx + s as f64 * bar_w,
                y.min(zero),
                bar_w,
                (y - zero).abs(),
                PALETTE[s % PALETTE.len()],
                esc(series.get(s).map_or("", String::as_str))
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            ML + (g as f64 + 0.5) * group_w,
            H - MB + 18.0,
            esc(name)
        );
    }
    let _ = writeln!(svg, "<line x1=\"{ML}\" x2=\"{:.1}\" y1=\"{zero:.1}\" y2=\"{zero:.1}\" stroke=\"black\"/>", W - MR);
    // Legend below the axis.
    for (s, name) in series.iter().enumerate() {
        let x = ML + s as f64 * (W - ML - MR) / series.len() as f64;
        let y = H - 22.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\">{}</text>",
            y - 10.0,
            PALETTE[s % PALETTE.len()],
            x + 16.0,
            esc(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{speed_histogram, HistogramConfig};

    #[test]
    fn hist_csv_has_header_and_bins() {
        let h = speed_histogram(&[6.5, 7.2, 7.9, 12.0], &HistogramConfig::default());
        let csv = csv_string(&hist_rows(&h)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("bin_lo,bin_hi,count,density,kde"));
        assert_eq!(lines.count(), 40);
    }

    #[test]
    fn kde_interpolation() {
        let k = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)];
        assert!((kde_at(&k, 0.5) - 0.5).abs() < 1e-12);
        assert!((kde_at(&k, 1.5) - 0.5).abs() < 1e-12);
        assert_eq!(kde_at(&k, 5.0), 0.0);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let h = speed_histogram(&[6.5, 7.2, 7.9], &HistogramConfig::default());
        let s = histogram_svg(&h, "speeds");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
        let b = grouped_bars_svg(
            "t",
            "bits",
            &["p1".into(), "p2".into()],
            &["a".into(), "b<c".into()],
            &[vec![0.2, -0.1], vec![f64::NAN, 0.4]],
        );
        assert_eq!(b.matches("<rect x=").count(), 3 + 2);
        assert!(b.contains("b&lt;c"));
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(10.0, 5), 2.0);
        assert_eq!(nice_step(0.9, 6), 0.2);
        assert_eq!(nice_step(40.0, 8), 5.0);
        assert_eq!(fmt_tick(-1e-17, 20.0), "0");
    }
}
