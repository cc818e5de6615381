//! CSV / JSON / SVG writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 <= |x| < 1e17`.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A CSV cell.
pub enum Cell {
    Int(u64),
    Float(f64),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

/// In-memory CSV with a fixed header.
pub struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    /// Panics if the row width differs from the header.
    pub fn row(&mut self, cells: Vec<Cell>) {
        let record = cells.into_iter().map(|c| match c {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => g17(v),
            Cell::Empty => String::new(),
        });
        self.writer.write_record(record).expect("CSV row width");
    }

    pub fn into_string(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory flush");
        String::from_utf8(bytes).expect("CSV cells are ASCII")
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Line chart of `values` against `1..=values.len()` with a horizontal
/// threshold line and an optional vertical marker at `marker`.
pub fn line_chart_svg(title: &str, values: &[f64], threshold: f64, marker: Option<usize>) -> String {
    const W: f64 = 720.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;

    let n = values.len().max(1) as f64;
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(threshold.min(0.0), f64::min);
    let hi = finite.fold(threshold.max(0.0), f64::max);
    let (lo, hi) = if hi > lo { (lo, hi + 0.05 * (hi - lo)) } else { (lo - 1.0, hi + 1.0) };
    let px = |i: f64| LEFT + (i - 1.0) / (n - 1.0).max(1.0) * (W - LEFT - RIGHT);
    let py = |v: f64| TOP + (hi - v.clamp(lo, hi)) / (hi - lo) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));

    // axes and ticks
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<path d="M{x0:.1} {y0:.1} V{y1:.1} H{x1:.1}" fill="none" stroke="black"/>"#);
    for t in 0..=5 {
        let v = lo + (hi - lo) * t as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let step = nice_step(n);
    let mut i = step;
    while i <= n {
        let x = px(i);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y1:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{i}</text>"#,
            y1 + 4.0,
            y1 + 18.0
        );
        i += step;
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#, (x0 + x1) / 2.0, H - 10.0);

    let ty = py(threshold);
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.1}" y1="{ty:.1}" x2="{x1:.1}" y2="{ty:.1}" stroke="firebrick" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}" text-anchor="end" fill="firebrick">A = {threshold:.3}</text>"#,
        x1 - 4.0,
        ty - 6.0
    );
    if let Some(m) = marker {
        let mx = px(m as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{mx:.1}" y1="{y0:.1}" x2="{mx:.1}" y2="{y1:.1}" stroke="gray" stroke-dasharray="2 3"/><text x="{:.1}" y="{:.1}" fill="gray">change at {m}</text>"#,
            mx + 4.0,
            y0 + 12.0
        );
    }

    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", px((i + 1) as f64), py(v)))
        .collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.join(" "));
    s.push_str("</svg>\n");
    s
}

fn nice_step(n: f64) -> f64 {
    let raw = (n / 8.0).max(1.0);
    let base = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * base)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * base)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        // reference strings from C printf("%.17g")
        let cases = [
            (0.5, "0.5"),
            (0.1, "0.10000000000000001"),
            (1.2337005501361697, "1.2337005501361697"),
            (100.0, "100"),
            (6.907755278982137, "6.9077552789821368"),
            (1e-5, "1.0000000000000001e-05"),
            (0.0001, "0.0001"),
            (1e17, "1e+17"),
            (12345678901234567.0, "12345678901234568"),
            (-2.5, "-2.5"),
            (0.0, "0"),
            (3.0e300, "3.0000000000000002e+300"),
        ];
        for (x, want) in cases {
            assert_eq!(g17(x), want, "{x}");
        }
        assert_eq!(g17(f64::INFINITY), "inf");
        assert_eq!(g17(f64::NAN), "nan");
    }

    #[test]
    fn g17_round_trips() {
        for x in [1.0 / 3.0, std::f64::consts::PI, 1e-300, 123.456, -7.1e-9, 8.5e16] {
            assert_eq!(g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_rows() {
        let mut c = Csv::new(&["n", "x"]);
        c.row(vec![1usize.into(), 0.5.into()]);
        c.row(vec![2usize.into(), None.into()]);
        assert_eq!(c.into_string(), "n,x\n1,0.5\n2,\n");
    }

    #[test]
    fn svg_has_threshold_and_marker() {
        let values: Vec<f64> = (0..200).map(|i| if i < 80 { 0.1 } else { (i - 79) as f64 }).collect();
        let svg = line_chart_svg("W_n", &values, 6.9, Some(80));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("A = 6.900"));
        assert!(svg.contains("change at 80"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg, line_chart_svg("W_n", &values, 6.9, Some(80)));
    }
}
