//! Minimal SVG line and grouped-bar charts.

use std::fmt::Write;

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        (lo, lo + 1.0)
    } else {
        (lo, hi * 1.05)
    }
}

fn header(out: &mut String, title: &str, y_label: &str, lo: f64, hi: f64) {
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_L}" y1="{y}" x2="{}" y2="{y}" stroke="black"/>"#,
        WIDTH - MARGIN_R,
        y = HEIGHT - MARGIN_B
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = HEIGHT - MARGIN_B - plot_h * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (s, name) in names.iter().enumerate() {
        let y = MARGIN_T + 16.0 * s as f64;
        let x = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}">{}</text>"#,
            y,
            PALETTE[s % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            escape(name)
        );
    }
}

/// One polyline per series over evenly spaced categorical x positions.
/// Missing values break nothing; they are simply skipped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, x_ticks: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (lo, hi) = y_range(series.iter().flat_map(|(_, v)| v.iter().flatten().copied()));
    let mut out = String::new();
    header(&mut out, title, y_label, lo, hi);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let n = x_ticks.len().max(1);
    let x_at = |j: usize| MARGIN_L + plot_w * (j as f64 + 0.5) / n as f64;
    let y_at = |v: f64| HEIGHT - MARGIN_B - plot_h * (v - lo) / (hi - lo);
    for (j, t) in x_ticks.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x_at(j),
            HEIGHT - MARGIN_B + 16.0,
            escape(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    for (s, (_, values)) in series.iter().enumerate() {
        let colour = PALETTE[s % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.filter(|v| v.is_finite()).map(|v| format!("{:.2},{:.2}", x_at(j), y_at(v))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for p in &points {
            let (x, y) = p.split_once(',').expect("point");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
        }
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per entry of `groups`, one bar per variant.
pub fn bar_chart(title: &str, y_label: &str, groups: &[String], variants: &[(String, Vec<f64>)]) -> String {
    let (lo, hi) = y_range(variants.iter().flat_map(|(_, v)| v.iter().copied()));
    let mut out = String::new();
    header(&mut out, title, y_label, lo, hi);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / variants.len().max(1) as f64;
    let y_at = |v: f64| HEIGHT - MARGIN_B - plot_h * (v - lo) / (hi - lo);
    for (g, name) in groups.iter().enumerate() {
        let gx = MARGIN_L + group_w * g as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            HEIGHT - MARGIN_B + 16.0,
            escape(name)
        );
        for (v, (_, values)) in variants.iter().enumerate() {
            let Some(&val) = values.get(g) else { continue };
            if !val.is_finite() {
                continue;
            }
            let x = gx + group_w * 0.1 + bar_w * v as f64;
            let (top, base) = (y_at(val), y_at(lo));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                (base - top).max(0.0),
                PALETTE[v % PALETTE.len()]
            );
        }
    }
    let names: Vec<&str> = variants.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}
