//! Static SVG scatter plots of 2-D embeddings, colored by class.

use std::fmt::Write as _;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// Colors assigned to classes in sorted-name order, cycled when exhausted.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 24.0;
const LEGEND_WIDTH: f64 = 150.0;
const RADIUS: f64 = 3.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Class names in sorted order and the palette color of each.
pub fn class_colors(labels: &[String]) -> Vec<(String, &'static str)> {
    let mut names = labels.to_vec();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .enumerate()
        .map(|(k, name)| (name, PALETTE[k % PALETTE.len()]))
        .collect()
}

/// One circle per point (first two coordinates) plus a legend with one entry
/// per class.
pub fn render_svg(table: &EmbeddingTable, title: Option<&str>) -> Result<String> {
    if table.is_empty() {
        return Err(Error::NoPoints);
    }
    let xy = |i: usize| {
        let p = table.point(i);
        (
            p.first().copied().unwrap_or(0.0),
            p.get(1).copied().unwrap_or(0.0),
        )
    };
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for i in 0..table.len() {
        let (x, y) = xy(i);
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Format(format!("point {i} is not finite")));
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let plot_w = WIDTH - LEGEND_WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = plot_w / span(x0, x1);
    let sy = plot_h / span(y0, y1);
    let colors = class_colors(&table.labels);
    let color_of = |label: &str| {
        let k = colors
            .binary_search_by(|(n, _)| n.as_str().cmp(label))
            .expect("label has a color");
        colors[k].1
    };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    if let Some(t) = title {
        writeln!(
            svg,
            r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="13">{}</text>"#,
            escape(t)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#cccccc"/>"##
    )
    .unwrap();
    writeln!(svg, "<g>").unwrap();
    for i in 0..table.len() {
        let (x, y) = xy(i);
        let px = MARGIN + (x - x0) * sx;
        let py = MARGIN + plot_h - (y - y0) * sy;
        writeln!(
            svg,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="{RADIUS}" fill="{}" fill-opacity="0.85"><title>{}</title></circle>"#,
            color_of(&table.labels[i]),
            escape(&table.labels[i])
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();
    writeln!(
        svg,
        r#"<g class="legend" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    let lx = WIDTH - LEGEND_WIDTH;
    for (k, (name, color)) in colors.iter().enumerate() {
        let ly = MARGIN + 10.0 + 18.0 * k as f64;
        writeln!(
            svg,
            r#"<g class="legend-entry"><circle cx="{lx}" cy="{ly}" r="5" fill="{color}"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 12.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}
