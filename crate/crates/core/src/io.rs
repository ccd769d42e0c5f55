//! Output helpers: tables, summaries, SVG plots and seeded generators.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Generator for one named use of a run's seed. ChaCha is counter based, so
/// distinct streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// 12 significant digits, shortest round-trip spelling.
pub fn fmt12(x: f64) -> String {
    format!("{:?}", round12(x))
}

/// Rounds every float inside a JSON value to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round12(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt12(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => serde_json::Number::from_f64(round12(*v)).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::text))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let m: serde_json::Map<String, Value> =
                    self.header.iter().cloned().zip(r.iter().map(Cell::json)).collect();
                Value::Object(m)
            })
            .collect();
        Value::Array(rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub pass: bool,
    pub detail: Value,
}

/// Machine-readable outcome of one experiment. Contains no timings, so equal
/// configurations and seeds serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub config: Value,
    /// Keyed by acceptance id (`AC1` ... `AC10`).
    pub assertions: BTreeMap<String, AssertionResult>,
    /// Diagnostics not tied to an acceptance id.
    pub checks: BTreeMap<String, AssertionResult>,
    pub results: Value,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.assertions.values().all(|a| a.pass)
    }

    pub fn to_json_string(&self) -> String {
        let v = round_json(serde_json::to_value(self).expect("summary serializes"));
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Everything an experiment writes.
#[derive(Clone, Debug)]
pub struct Output {
    pub summary: Summary,
    pub tables: Vec<Table>,
    /// `(file stem, svg document)`.
    pub plots: Vec<(String, String)>,
}

impl Output {
    /// Writes `summary.json`, one file per table and one per plot.
    pub fn write(&self, dir: &Path, format: Format) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), self.summary.to_json_string())?;
        for t in &self.tables {
            match format {
                Format::Csv => {
                    let s = t.to_csv().map_err(std::io::Error::other)?;
                    std::fs::write(dir.join(format!("{}.csv", t.name)), s)?;
                }
                Format::Json => {
                    let s = serde_json::to_string_pretty(&t.to_json()).expect("table serializes");
                    std::fs::write(dir.join(format!("{}.json", t.name)), s + "\n")?;
                }
            }
        }
        for (name, svg) in &self.plots {
            std::fs::write(dir.join(format!("{name}.svg")), svg)?;
        }
        Ok(())
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Standalone line plot. The data is repeated in XML comments so that plots
/// diff as text.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    for se in series {
        let _ = writeln!(s, "<!-- series {} -->", se.name);
        for &(x, y) in &se.points {
            let _ = writeln!(s, "<!-- {} {} -->", fmt12(x), fmt12(y));
        }
    }
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{} {m},{} {},{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m,
        h - m
    );
    for (k, v) in [(0.0, x0), (1.0, x1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            m + k * (w - 2.0 * m),
            h - m + 16.0,
            tick(v)
        );
    }
    for (k, v) in [(0.0, y0), (1.0, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            m - 6.0,
            h - m - k * (h - 2.0 * m) + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        w / 2.0,
        h - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    );
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = se
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
        for p in &path {
            let (px, py) = p.split_once(',').expect("point pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="2.5" fill="{c}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{c}">{}</text>"#,
            w - m - 140.0,
            m + 16.0 * i as f64,
            escape(&se.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Disks in the plane, one circle per ball, with a data comment each.
pub fn disk_plot(title: &str, disks: &[(f64, f64, f64, usize)]) -> String {
    let (w, m) = (600.0, 20.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, r, _) in disks {
        lo = lo.min(x - r).min(y - r);
        hi = hi.max(x + r).max(y + r);
    }
    if !lo.is_finite() || hi <= lo {
        (lo, hi) = (0.0, 1.0);
    }
    let sc = (w - 2.0 * m) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#);
    for &(x, y, r, g) in disks {
        let _ = writeln!(s, "<!-- {g} {} {} {} -->", fmt12(x), fmt12(y), fmt12(r));
    }
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{w}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for &(x, y, r, g) in disks {
        let c = COLORS[g % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="{c}"/>"#,
            m + (x - lo) * sc,
            w - m - (y - lo) * sc,
            r * sc
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rounding_is_stable() {
        assert_eq!(fmt12(0.1 + 0.2), "0.3");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(1e-20), "1e-20");
        assert_eq!(round12(round12(std::f64::consts::PI)), round12(std::f64::consts::PI));
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(5, 1).random();
        let b: u64 = stream_rng(5, 2).random();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(5, 1).random::<u64>());
    }

    #[test]
    fn table_round_trips_through_csv() {
        let mut t = Table::new("t", &["l", "cost", "ok"]);
        t.push(vec![2usize.into(), 5.656854249492381.into(), true.into()]);
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "l,cost,ok\n2,5.65685424949,true\n");
        let mut r = csv::Reader::from_reader(csv.as_bytes());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(rec.get(1).unwrap().parse::<f64>().unwrap(), round12(5.656854249492381));
    }

    #[test]
    fn plots_embed_data() {
        let svg = line_plot("t", "x", "y", &[Series { name: "a".into(), points: vec![(1.0, 2.0), (2.0, 3.5)] }]);
        assert!(svg.contains("<!-- 2.0 3.5 -->"));
        assert!(svg.starts_with("<svg"));
    }
}
