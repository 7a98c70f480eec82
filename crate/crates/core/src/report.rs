//! Text and SVG emission shared by the exporters.
//!
//! CSV is comma separated with a header row; numbers use six significant
//! digits. SVG output is self-contained.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Where an artifact came from: tool, version, master seed and a digest of
/// every input byte.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub input_hash: String,
}

/// Formats `x` with six significant digits, `%g` style.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..6).contains(&exp) {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Heatmap as a grid of rects; rows are the former label, columns the latter.
pub fn heatmap_svg(labels: &[String], counts: &[Vec<u64>], title: &str) -> String {
    let k = labels.len();
    let cell = 18usize;
    let margin = 12 + labels.iter().map(|l| l.len()).max().unwrap_or(1) * 7;
    let size = margin + k * cell + 20;
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="10">"#,
        size + 20
    );
    let _ = writeln!(svg, r#"<text x="4" y="14" font-size="12">{}</text>"#, xml_escape(title));
    let top = margin + 20;
    for (i, name) in labels.iter().enumerate() {
        let y = top + i * cell + cell / 2 + 3;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            margin - 4,
            xml_escape(name)
        );
        let x = margin + i * cell + cell / 2;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 4,
            top - 4,
            xml_escape(name)
        );
    }
    for (r, row) in counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let level = 255 - ((v as f64 / max) * 220.0).round() as u8;
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb(255,{level},{level})" stroke="#ddd"><title>{} → {}: {v}</title></rect>"##,
                margin + c * cell,
                top + r * cell,
                xml_escape(&labels[r]),
                xml_escape(&labels[c]),
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Ranked bar chart; the first `highlight` bars are drawn red.
pub fn ranked_bars_svg(values: &[u64], highlight: usize, title: &str) -> String {
    let bar = 8usize;
    let height = 200usize;
    let width = 40 + values.len().max(1) * bar + 20;
    let max = values.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="10">"#,
        height + 40
    );
    let _ = writeln!(svg, r#"<text x="4" y="14" font-size="12">{}</text>"#, xml_escape(title));
    for (i, &v) in values.iter().enumerate() {
        let h = ((v as f64 / max) * height as f64).round() as usize;
        let color = if i < highlight { "#d62728" } else { "#7f7f7f" };
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{h}" fill="{color}"><title>rank {}: {v}</title></rect>"#,
            40 + i * bar,
            20 + height - h,
            bar - 1,
            i + 1
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars, one group per label and one bar per series.
pub fn grouped_bars_svg(labels: &[String], series: &[(&str, &str, Vec<f64>)], title: &str) -> String {
    let bar = 7usize;
    let group = bar * series.len().max(1) + 6;
    let height = 200usize;
    let width = 40 + labels.len().max(1) * group + 20;
    let max = series
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="10">"#,
        height + 120
    );
    let _ = writeln!(svg, r#"<text x="4" y="14" font-size="12">{}</text>"#, xml_escape(title));
    for (s, (name, color, _)) in series.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="22" width="8" height="8" fill="{color}"/><text x="{}" y="30">{}</text>"#,
            40 + s * 110,
            52 + s * 110,
            xml_escape(name)
        );
    }
    let base = 40 + height;
    for (g, label) in labels.iter().enumerate() {
        let x0 = 40 + g * group;
        for (s, (_, color, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let h = ((v / max) * height as f64).round() as usize;
            let _ = writeln!(
                svg,
                r#"<rect x="{}" y="{}" width="{}" height="{h}" fill="{color}"><title>{}: {}</title></rect>"#,
                x0 + s * bar,
                base - h,
                bar - 1,
                xml_escape(label),
                fmt_num(v)
            );
        }
        let tx = x0 + group / 2;
        let _ = writeln!(
            svg,
            r#"<text x="{tx}" y="{}" transform="rotate(60 {tx} {})">{}</text>"#,
            base + 10,
            base + 10,
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
