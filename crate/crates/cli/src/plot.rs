//! Static SVG plots rendered from CSV tables. Output bytes are a pure
//! function of the input table, so plots replay bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Scatter2d,
    Line,
    Histogram,
}

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "scatter2d" => Self::Scatter2d,
            "line" => Self::Line,
            "histogram" => Self::Histogram,
            other => bail!("unknown plot kind '{other}'"),
        })
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 10] = [
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
    "#9c6b4e", "#9498a0",
];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn parse_table(csv: &str) -> Result<Table> {
    let mut lines = csv.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok(Table { header, rows })
}

fn column(table: &Table, name: &str) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("table has no column '{name}'"))
}

fn numeric(table: &Table, col: usize) -> Result<Vec<f64>> {
    table
        .rows
        .iter()
        .map(|r| {
            r.get(col)
                .with_context(|| format!("row too short for column {col}"))?
                .parse::<f64>()
                .with_context(|| format!("non-numeric cell in column {col}"))
        })
        .collect()
}

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn from_data(xs: &[f64], ys: &[f64]) -> Axes {
        let span = |vals: &[f64]| -> (f64, f64) {
            if vals.is_empty() {
                return (0.0, 1.0);
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        };
        let (x_min, x_max) = span(xs);
        let (y_min, y_max) = span(ys);
        Axes {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    );
}

fn svg_axes(out: &mut String, axes: &Axes) {
    let x0 = MARGIN;
    let x1 = WIDTH - MARGIN;
    let y0 = HEIGHT - MARGIN;
    let y1 = MARGIN;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let xv = axes.x_min + frac * (axes.x_max - axes.x_min);
        let yv = axes.y_min + frac * (axes.y_max - axes.y_min);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">{:.3}</text>",
            axes.sx(xv),
            y0 + 16.0,
            xv
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"end\">{:.3}</text>",
            x0 - 6.0,
            axes.sy(yv) + 3.0,
            yv
        );
    }
}

/// Render a CSV table to an SVG file.
///
/// * `scatter2d` expects `x0,x1` columns and optionally `condition`.
/// * `line` uses the first column as x and every other numeric column as
///   one series.
/// * `histogram` expects `bin_left,count`.
pub fn emit_plot(csv: &str, kind: PlotKind, path: &Path, title: &str) -> Result<()> {
    let table = parse_table(csv)?;
    let mut out = String::new();
    svg_open(&mut out, title);
    match kind {
        PlotKind::Scatter2d => {
            let cx = column(&table, "x0")?;
            let cy = column(&table, "x1")?;
            let ccond = column(&table, "condition").ok();
            let xs = numeric(&table, cx)?;
            let ys = numeric(&table, cy)?;
            let axes = Axes::from_data(&xs, &ys);
            svg_axes(&mut out, &axes);
            for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
                let color = match ccond {
                    Some(c) => {
                        let label = &table.rows[i][c];
                        let idx = label
                            .strip_prefix("class")
                            .and_then(|d| d.parse::<usize>().ok())
                            .unwrap_or(9);
                        PALETTE[idx % PALETTE.len()]
                    }
                    None => PALETTE[0],
                };
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\" \
                     fill-opacity=\"0.7\"/>",
                    axes.sx(*x),
                    axes.sy(*y)
                );
            }
        }
        PlotKind::Line => {
            if table.header.is_empty() {
                bail!("line plot needs at least two columns");
            }
            let xs = if table.rows.is_empty() {
                Vec::new()
            } else {
                numeric(&table, 0)?
            };
            let mut all_y = Vec::new();
            let mut series = Vec::new();
            for col in 1..table.header.len() {
                let ys = numeric(&table, col)?;
                all_y.extend_from_slice(&ys);
                series.push((table.header[col].clone(), ys));
            }
            let axes = Axes::from_data(&xs, &all_y);
            svg_axes(&mut out, &axes);
            for (si, (name, ys)) in series.iter().enumerate() {
                let color = PALETTE[si % PALETTE.len()];
                let points: Vec<String> = xs
                    .iter()
                    .zip(ys)
                    .map(|(x, y)| format!("{:.2},{:.2}", axes.sx(*x), axes.sy(*y)))
                    .collect();
                if !points.is_empty() {
                    let _ = writeln!(
                        out,
                        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                         stroke-width=\"1.5\"/>",
                        points.join(" ")
                    );
                }
                let _ = writeln!(
                    out,
                    "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
                     fill=\"{color}\">{name}</text>",
                    WIDTH - MARGIN - 120.0,
                    MARGIN + 14.0 * (si as f64 + 1.0)
                );
            }
        }
        PlotKind::Histogram => {
            let cl = column(&table, "bin_left")?;
            let cc = column(&table, "count")?;
            let lefts = numeric(&table, cl)?;
            let counts = numeric(&table, cc)?;
            let bin_w = if lefts.len() >= 2 {
                lefts[1] - lefts[0]
            } else {
                1.0
            };
            let xs: Vec<f64> = lefts
                .iter()
                .map(|l| l + bin_w)
                .chain(lefts.iter().copied())
                .collect();
            let mut ys = counts.clone();
            ys.push(0.0);
            let axes = Axes::from_data(&xs, &ys);
            svg_axes(&mut out, &axes);
            for (l, c) in lefts.iter().zip(&counts) {
                let x = axes.sx(*l);
                let w = axes.sx(l + bin_w) - x;
                let y = axes.sy(*c);
                let h = axes.sy(0.0) - y;
                let _ = writeln!(
                    out,
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                     fill=\"{}\" stroke=\"white\"/>",
                    w.max(0.5),
                    h.max(0.0),
                    PALETTE[0]
                );
            }
        }
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out).with_context(|| format!("writing plot {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_produces_valid_svg_with_axes() {
        let dir = std::env::temp_dir().join("noiselab_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.svg");
        emit_plot("x0,x1\n", PlotKind::Scatter2d, &path, "empty").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("<line"));
        assert!(!text.contains("<circle"));
    }

    #[test]
    fn plot_bytes_are_deterministic() {
        let dir = std::env::temp_dir().join("noiselab_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv = "bin_left,count\n0,3\n0.5,1\n";
        let p1 = dir.join("h1.svg");
        let p2 = dir.join("h2.svg");
        emit_plot(csv, PlotKind::Histogram, &p1, "hist").unwrap();
        emit_plot(csv, PlotKind::Histogram, &p2, "hist").unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn line_plot_has_one_series_per_extra_column() {
        let dir = std::env::temp_dir().join("noiselab_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv = "s,w1,w75\n0,1,2\n5,2,2\n10,3,1\n";
        let path = dir.join("line.svg");
        emit_plot(csv, PlotKind::Line, &path, "lines").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
    }

    #[test]
    fn unknown_column_is_an_error() {
        let dir = std::env::temp_dir().join("noiselab_plot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.svg");
        assert!(emit_plot("a,b\n1,2\n", PlotKind::Scatter2d, &path, "bad").is_err());
    }
}
