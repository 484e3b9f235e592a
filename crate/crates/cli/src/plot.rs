//! Minimal deterministic SVG plots of two-column tables.

use std::fmt::Write as _;
use std::io::Read;

use anyhow::{bail, Context, Result};

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        Self { headers, rows }
    }

    /// Reads a CSV with a header row; every cell must parse as a number.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| c.trim().parse::<f64>().with_context(|| format!("non-numeric cell `{c}`")))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { headers, rows })
    }

    /// Copy keeping the columns `x` and `y`, in that order.
    pub fn columns(&self, x: &str, y: &str) -> Result<Self> {
        let find = |name: &str| {
            self.headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("no column `{name}`"))
        };
        let (i, j) = (find(x)?, find(y)?);
        Ok(Self {
            headers: vec![x.into(), y.into()],
            rows: self.rows.iter().map(|r| vec![r[i], r[j]]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    /// `log10` on the vertical axis.
    Semilog,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Plots the second column against the first as a single polyline; axis labels
/// are the column headers.
pub fn emit_plot(table: &Table, kind: PlotKind) -> Result<String> {
    if table.rows.is_empty() {
        bail!("cannot plot an empty table");
    }
    if table.headers.len() < 2 || table.rows.iter().any(|r| r.len() < 2) {
        bail!("plot needs two columns");
    }
    let mut pts = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        let y = match kind {
            PlotKind::Line => r[1],
            PlotKind::Semilog => r[1].log10(),
        };
        if r[0].is_finite() && y.is_finite() {
            pts.push((r[0], y));
        }
    }
    if pts.is_empty() {
        bail!("no finite points to plot");
    }
    let (x0, x1) = span(pts.iter().map(|p| p.0));
    let (y0, y1) = span(pts.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let ylabel = match kind {
        PlotKind::Line => escape(&table.headers[1]),
        PlotKind::Semilog => format!("log10 {}", escape(&table.headers[1])),
    };

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#)?;
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(svg, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#)?;
    for (v, x) in [(x0, left), (x1, right)] {
        writeln!(svg, r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{v:.4e}</text>"#, bottom + 16.0)?;
    }
    for (v, y) in [(y0, bottom), (y1, top)] {
        writeln!(svg, r#"<text x="{}" y="{y}" font-size="11" text-anchor="end">{v:.4e}</text>"#, left - 4.0)?;
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&table.headers[0])
    )?;
    writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )?;
    let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y))).collect();
    writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, coords.join(" "))?;
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<f64>>) -> Table {
        Table::new(vec!["L".into(), "norm".into()], rows)
    }

    fn polyline_points(svg: &str) -> Vec<(f64, f64)> {
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end]
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn two_rows_give_one_polyline_with_labels() {
        let svg = emit_plot(&table(vec![vec![1.0, 2.0], vec![2.0, 3.0]]), PlotKind::Line).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains(">L</text>"));
        assert!(svg.contains(">norm</text>"));
        assert_eq!(polyline_points(&svg).len(), 2);
    }

    #[test]
    fn semilog_of_growing_sweep_is_monotone() {
        let rows = (1..=6).map(|i| vec![10.0 * i as f64, (0.8 * i as f64).exp()]).collect();
        let svg = emit_plot(&table(rows), PlotKind::Semilog).unwrap();
        assert!(svg.contains("log10 norm"));
        let pts = polyline_points(&svg);
        // svg y grows downwards
        assert!(pts.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1));
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(emit_plot(&table(vec![]), PlotKind::Line).is_err());
        assert!(emit_plot(&table(vec![vec![1.0, -1.0]]), PlotKind::Semilog).is_err());
    }

    #[test]
    fn output_is_deterministic_and_escaped() {
        let t = Table::new(vec!["a<b".into(), "y".into()], vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
        let a = emit_plot(&t, PlotKind::Line).unwrap();
        assert_eq!(a, emit_plot(&t, PlotKind::Line).unwrap());
        assert!(a.contains("a&lt;b"));
    }

    #[test]
    fn csv_round_trip_and_column_selection() {
        let t = Table::from_csv("t,x,y\n0,1,2\n0.5,3,4\n".as_bytes()).unwrap();
        assert_eq!(t.headers, ["t", "x", "y"]);
        let c = t.columns("t", "y").unwrap();
        assert_eq!(c.rows, vec![vec![0.0, 2.0], vec![0.5, 4.0]]);
        assert!(t.columns("t", "z").is_err());
        assert!(Table::from_csv("a,b\n1,x\n".as_bytes()).is_err());
    }
}
