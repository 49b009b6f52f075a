//! Minimal static SVG charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn frame(out: &mut String, title: &str, y: (f64, f64)) {
    let (x0, x1) = (MARGIN, PANEL_W - 10.0);
    let (y0, y1) = (PANEL_H - 24.0, 24.0);
    let _ = writeln!(out, r#"<text x="{x0}" y="16" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(out, r#"<text x="4" y="{:.1}" font-size="10">{:.3}</text>"#, y1 + 8.0, y.1);
    let _ = writeln!(out, r#"<text x="4" y="{y0:.1}" font-size="10">{:.3}</text>"#, y.0);
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    let (y0, y1) = (PANEL_H - 24.0, 24.0);
    y0 - (v - lo) / (hi - lo) * (y0 - y1)
}

/// One panel with a line per series, e.g. one per chain.
pub fn line_panel(title: &str, series: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let y = finite_range(series.iter().flatten().copied());
    frame(&mut out, title, y);
    let n = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let dx = (PANEL_W - 10.0 - MARGIN) / (n - 1) as f64;
    for (c, values) in series.iter().enumerate() {
        let mut points = String::new();
        for (i, v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(points, "{:.1},{:.1} ", MARGIN + i as f64 * dx, scale(*v, y));
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="0.8" points="{}"/>"#,
            PALETTE[c % PALETTE.len()],
            points.trim_end()
        );
    }
    out
}

/// One panel of bars with an optional dashed reference line.
pub fn bar_panel(title: &str, labels: &[String], values: &[f64], range: (f64, f64), reference: Option<f64>) -> String {
    let mut out = String::new();
    frame(&mut out, title, range);
    let n = values.len().max(1);
    let slot = (PANEL_W - 10.0 - MARGIN) / n as f64;
    let base = scale(range.0, range);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let top = scale(v.clamp(range.0, range.1), range);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            slot * 0.7,
            (base - top).max(0.0),
            PALETTE[0]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            PANEL_H - 10.0,
            escape(label)
        );
    }
    if let Some(r) = reference {
        let yr = scale(r, range);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN}" x2="{:.1}" y1="{yr:.1}" y2="{yr:.1}" stroke="#444" stroke-dasharray="4 3"/>"##,
            PANEL_W - 10.0
        );
    }
    out
}

/// Stacks panels vertically into one document.
pub fn document(panels: &[String]) -> String {
    let height = PANEL_H * panels.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{height}\" font-family=\"sans-serif\">\n"
    );
    for (i, p) in panels.iter().enumerate() {
        let _ = writeln!(out, r#"<g transform="translate(0,{})">"#, i as f64 * PANEL_H);
        out.push_str(p);
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}
