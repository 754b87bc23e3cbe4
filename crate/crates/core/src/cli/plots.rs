//! Self-contained SVG figures for evaluation reports.

use crate::dsp::colormap;
use crate::traineval::Metrics;
use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 50.0;

/// Line plot of accuracy per JNR bin.
pub fn accuracy_vs_jnr_svg(metrics: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, W - 20.0, H - MARGIN, 20.0);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    let bins = &metrics.per_jnr;
    let (lo, hi) = match (bins.first(), bins.last()) {
        (Some(a), Some(b)) if b.jnr_db > a.jnr_db => (a.jnr_db, b.jnr_db),
        (Some(a), _) => (a.jnr_db - 1.0, a.jnr_db + 1.0),
        _ => (0.0, 1.0),
    };
    let px = |j: f64| x0 + (j - lo) / (hi - lo) * (x1 - x0);
    let py = |a: f64| y0 - a * (y0 - y1);
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, x0 - 6.0, py(a) + 4.0, a);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="#ddd"/>"##, py(a));
    }
    let points: Vec<String> = bins.iter().map(|b| format!("{:.2},{:.2}", px(b.jnr_db), py(b.accuracy))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f5fa6" stroke-width="2"/>"##, points.join(" "));
    for b in bins {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f5fa6"/>"##, px(b.jnr_db), py(b.accuracy));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(b.jnr_db), y0 + 16.0, b.jnr_db);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">JNR (dB)</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {0})" text-anchor="middle">Accuracy</text>"#, (y0 + y1) / 2.0);
    s.push_str("</svg>\n");
    s
}

/// Heatmap of the confusion matrix, columns normalized per true class.
pub fn confusion_svg(metrics: &Metrics, class_names: &[&str]) -> String {
    let k = metrics.confusion.len();
    let cell = 44.0;
    let (ox, oy) = (70.0, 30.0);
    let size = ox + cell * k as f64 + 20.0;
    let totals = metrics.class_totals();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="10">"#, size + 30.0);
    let _ = writeln!(s, r#"<rect width="{size}" height="{}" fill="white"/>"#, size + 30.0);
    for p in 0..k {
        for t in 0..k {
            let n = metrics.confusion[p][t];
            let frac = if totals[t] > 0 { n as f64 / totals[t] as f64 } else { 0.0 };
            let [r, g, b] = colormap(frac);
            let (x, y) = (ox + t as f64 * cell, oy + p as f64 * cell);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({},{},{})"/>"#,
                (r * 255.0).round(),
                (g * 255.0).round(),
                (b * 255.0).round()
            );
            let fill = if frac > 0.6 { "black" } else { "white" };
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" fill="{fill}">{n}</text>"#, x + cell / 2.0, y + cell / 2.0 + 4.0);
        }
        let name = class_names.get(p).copied().unwrap_or("?");
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#, ox - 6.0, oy + (p as f64 + 0.5) * cell + 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#, ox + (p as f64 + 0.5) * cell, oy - 8.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">true class (columns) / predicted (rows)</text>"#, ox + cell * k as f64 / 2.0, oy + cell * k as f64 + 20.0);
    s.push_str("</svg>\n");
    s
}
