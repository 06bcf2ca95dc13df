use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "x,series,value,stderr";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

/// One named series of an experiment figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub series: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(series: impl Into<String>) -> Self {
        Curve { series: series.into(), points: Vec::new() }
    }

    pub fn push(&mut self, x: f64, value: f64, stderr: f64) {
        self.points.push(CurvePoint { x, value, stderr });
    }

    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|p| p.x == x).map(|p| p.value)
    }
}

fn check_curves(curves: &[Curve]) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::domain("no curves to write"));
    }
    for c in curves {
        if c.points.is_empty() {
            return Err(Error::domain(format!("curve {:?} has no points", c.series)));
        }
        if c.series.is_empty() || c.series.contains([',', '\n', '\r', '"']) {
            return Err(Error::domain(format!("series name {:?} is not CSV-safe", c.series)));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Row<'a> {
    x: f64,
    series: &'a str,
    value: f64,
    stderr: f64,
}

/// CSV text with header `x,series,value,stderr`; floats use the shortest
/// representation that parses back to the same value.
pub fn render_csv(curves: &[Curve]) -> Result<String> {
    check_curves(curves)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in curves {
        for p in &c.points {
            w.serialize(Row { x: p.x, series: &c.series, value: p.value, stderr: p.stderr })
                .map_err(|e| Error::domain(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writes utf-8"))
}

pub fn emit_csv(curves: &[Curve], path: &Path) -> Result<()> {
    let text = render_csv(curves)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Inverse of [`render_csv`]; series keep their order of first appearance.
pub fn parse_csv(text: &str) -> Result<Vec<Curve>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| crate::container::parse(0, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(crate::container::parse(0, "missing CSV header"));
    }
    let mut curves: Vec<Curve> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            crate::container::parse(offset, e.to_string())
        })?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let row: Row = record.deserialize(None).map_err(|e| crate::container::parse(offset, e.to_string()))?;
        match curves.iter_mut().find(|c| c.series == row.series) {
            Some(c) => c.push(row.x, row.value, row.stderr),
            None => {
                let mut c = Curve::new(row.series);
                c.push(row.x, row.value, row.stderr);
                curves.push(c);
            }
        }
    }
    Ok(curves)
}

/// Axis labels and scaling of an SVG chart. The y axis is always
/// logarithmic.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained line chart. Non-positive or non-finite values are left out.
pub fn render_svg(curves: &[Curve], chart: &Chart) -> Result<String> {
    check_curves(curves)?;
    let tx = |x: f64| if chart.log_x { x.log10() } else { x };
    let usable = |p: &CurvePoint| p.value > 0.0 && p.value.is_finite() && (!chart.log_x || p.x > 0.0);
    let pts: Vec<&CurvePoint> = curves.iter().flat_map(|c| c.points.iter()).filter(|p| usable(p)).collect();
    if pts.is_empty() {
        return Err(Error::domain("no positive finite values to plot on a log scale"));
    }
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(tx(p.x)), b.max(tx(p.x))));
    if x1 == x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.value), b.max(p.value)));
    let y0 = lo.log10().floor();
    let mut y1 = hi.log10().ceil();
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |v: f64| TOP + (y1 - v.log10()) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&chart.title));
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
    let decades = (y1 - y0) as i64;
    let stride = (decades / 8).max(1);
    for e in (y0 as i64..=y1 as i64).step_by(stride as usize) {
        let y = sy(10f64.powi(e as i32));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"#, LEFT - 6.0, y + 4.0);
    }
    for i in 0..=4 {
        let t = x0 + (x1 - x0) * i as f64 / 4.0;
        let label = if chart.log_x { 10f64.powf(t) } else { t };
        let x = LEFT + pw * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, trim_tick(label));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0, escape(&chart.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = c.points.iter().filter(|p| usable(p)).map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.value))).collect();
        if coords.len() > 1 {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, coords.join(" "));
        }
        for xy in &coords {
            let (x, y) = xy.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&c.series));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn trim_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 * v.abs().max(1.0) {
        format!("{}", v.round())
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_svg(curves: &[Curve], chart: &Chart, path: &Path) -> Result<()> {
    let text = render_svg(curves, chart)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
