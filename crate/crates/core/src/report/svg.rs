//! Minimal SVG 1.1 charts with a fixed layout and palette, so output bytes
//! depend only on the input.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ArtifactHeader, ReportError};

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 72.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YAxis {
    Left,
    Right,
}

/// A polyline with markers, plotted against one of the two y axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub axis: YAxis,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Compact tick label: up to 4 significant digits, no trailing zeros.
fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-3..6).contains(&mag) {
        return format!("{v:.2e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[derive(Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(0.05 * lo.abs()) };
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn ticks(self) -> impl Iterator<Item = f64> {
        (0..TICKS).map(move |i| self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64)
    }
}

struct Frame {
    x: Range,
    y_left: Range,
    y_right: Option<Range>,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(r: Range, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - r.lo) / (r.hi - r.lo) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, header: &ArtifactHeader, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, "<!-- {} -->", escape(&header.comment_text()));
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_left: &str, y_right: Option<&str>) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r##"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="#333333"/>"##
    );
    for t in f.x.ticks() {
        let x = f.px(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333333"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            y0 + 4.0,
            y0 + 16.0,
            tick_label(t)
        );
    }
    for t in f.y_left.ticks() {
        let y = Frame::py(f.y_left, t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#333333"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_left)
    );
    if let (Some(r), Some(label)) = (f.y_right, y_right) {
        let _ = writeln!(
            out,
            r##"<path d="M{x1:.1},{y1:.1} V{y0:.1}" fill="none" stroke="#333333"/>"##
        );
        for t in r.ticks() {
            let y = Frame::py(r, t);
            let _ = writeln!(
                out,
                r##"<line x1="{x1:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#333333"/><text x="{:.1}" y="{:.1}" text-anchor="start">{}</text>"##,
                x1 + 4.0,
                x1 + 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
        let xr = WIDTH - 14.0;
        let _ = writeln!(
            out,
            r#"<text x="{xr:.1}" y="{:.1}" text-anchor="middle" transform="rotate(90 {xr:.1} {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(label)
        );
    }
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 6.0 + 14.0 * i as f64;
        let x = WIDTH - RIGHT - 130.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="9" height="9" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 13.0,
            y + 8.5,
            escape(label)
        );
    }
}

/// Scatter plot, one color per group (groups in sorted order take palette
/// colors in turn). Each point is exactly one `<circle>` element.
pub fn emit_svg_scatter(
    points: &[ScatterPoint],
    title: &str,
    x_label: &str,
    y_label: &str,
    header: &ArtifactHeader,
) -> Result<String, ReportError> {
    if points.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let groups: BTreeMap<&str, &str> = {
        let mut names: Vec<&str> = points.iter().map(|p| p.group.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g, PALETTE[i % PALETTE.len()]))
            .collect()
    };
    let frame = Frame {
        x: Range::of(points.iter().map(|p| p.x)),
        y_left: Range::of(points.iter().map(|p| p.y)),
        y_right: None,
    };
    let mut out = String::new();
    open(&mut out, header, title);
    axes(&mut out, &frame, x_label, y_label, None);
    for p in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.85"/>"#,
            frame.px(p.x),
            Frame::py(frame.y_left, p.y),
            groups[p.group.as_str()]
        );
    }
    let entries: Vec<(String, &str)> = groups.iter().map(|(g, c)| (g.to_string(), *c)).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line chart with a shared x axis and independent left/right y axes.
/// `markers` draws vertical dashed guides at the given x positions.
pub fn emit_svg_lines(
    series: &[LineSeries],
    markers: &[(f64, String)],
    title: &str,
    x_label: &str,
    (left_label, right_label): (&str, Option<&str>),
    header: &ArtifactHeader,
) -> Result<String, ReportError> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(ReportError::EmptyInput);
    }
    let on = |axis: YAxis| {
        series
            .iter()
            .filter(move |s| s.axis == axis)
            .flat_map(|s| s.points.iter().map(|p| p.1))
    };
    let has_right = series.iter().any(|s| s.axis == YAxis::Right);
    let frame = Frame {
        x: Range::of(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y_left: Range::of(on(YAxis::Left)),
        y_right: has_right.then(|| Range::of(on(YAxis::Right))),
    };
    let mut out = String::new();
    open(&mut out, header, title);
    axes(&mut out, &frame, x_label, left_label, right_label.filter(|_| has_right));
    for (x, label) in markers {
        let px = frame.px(*x);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{TOP:.1}" x2="{px:.2}" y2="{:.1}" stroke="#777777" stroke-dasharray="2,3"/><text x="{:.2}" y="{:.1}" fill="#555555">{}</text>"##,
            HEIGHT - BOTTOM,
            px + 3.0,
            HEIGHT - BOTTOM - 4.0,
            escape(label)
        );
    }
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let range = match s.axis {
            YAxis::Left => frame.y_left,
            YAxis::Right => frame.y_right.expect("right axis present"),
        };
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), Frame::py(range, y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (x, y) = c.split_once(',').expect("coordinate pair");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let side = match s.axis {
            YAxis::Left => "left",
            YAxis::Right => "right",
        };
        entries.push((format!("{} ({side})", s.label), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> ArtifactHeader {
        ArtifactHeader::new(0, &"test")
    }

    fn pt(x: f64, y: f64, g: &str) -> ScatterPoint {
        ScatterPoint {
            x,
            y,
            group: g.into(),
        }
    }

    #[test]
    fn one_point_one_marker() {
        let s = emit_svg_scatter(&[pt(1.0, 2.0, "a")], "t", "x", "y", &header()).unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(s.starts_with("<?xml"));
        assert!(s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn groups_get_distinct_colors() {
        let s = emit_svg_scatter(
            &[pt(1.0, 2.0, "b"), pt(2.0, 1.0, "a"), pt(3.0, 3.0, "b")],
            "t",
            "x",
            "y",
            &header(),
        )
        .unwrap();
        let fills: std::collections::BTreeSet<&str> = s
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 2);
        assert!(fills.contains(PALETTE[0]) && fills.contains(PALETTE[1]));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            emit_svg_scatter(&[], "t", "x", "y", &header()),
            Err(ReportError::EmptyInput)
        ));
    }

    #[test]
    fn labels_escaped() {
        let s = emit_svg_scatter(&[pt(0.0, 0.0, "<g>")], "a & b", "x", "y", &header()).unwrap();
        assert!(s.contains("a &amp; b") && s.contains("&lt;g&gt;"));
    }

    #[test]
    fn ticks() {
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(1234.5678), "1235");
        assert_eq!(tick_label(-0.00001), "-1.00e-5");
        assert_eq!(tick_label(2.0), "2");
    }
}
