//! Minimal deterministic SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
            markers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    step: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 {
                lo.abs() * 0.1
            } else {
                1.0
            };
            lo -= pad;
            hi += pad;
        }
        if log {
            return Self {
                lo: lo.floor(),
                hi: hi.ceil(),
                log,
                step: 1.0,
            };
        }
        let raw = (hi - lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw * (1.0 - 1e-9))
            .unwrap_or(10.0 * mag);
        Self {
            lo: (lo / step + 1e-9).floor() * step,
            hi: (hi / step - 1e-9).ceil() * step,
            log,
            step,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            return (self.lo as i32..=self.hi as i32)
                .map(|e| 10f64.powi(e))
                .collect();
        }
        let first = (self.lo / self.step).round() as i64;
        let last = (self.hi / self.step).round() as i64;
        (first..=last).map(|k| k as f64 * self.step).collect()
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.0e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let keep = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
        let pts = || {
            self.series
                .iter()
                .flat_map(|s| s.points.iter())
                .filter(|(x, y)| keep(*x, self.log_x) && keep(*y, self.log_y))
        };
        let ax = Axis::fit(pts().map(|p| p.0), self.log_x);
        let ay = Axis::fit(pts().map(|p| p.1), self.log_y);
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let px = |x: f64| LEFT + ax.frac(x) * pw;
        let py = |y: f64| TOP + (1.0 - ay.frac(y)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
        );
        for t in ax.ticks() {
            let x = px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                fmt_tick(t)
            );
        }
        for t in ay.ticks() {
            let y = py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| keep(*x, self.log_x) && keep(*y, self.log_y))
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let dash = if series.dashed {
                r#" stroke-dasharray="5,3""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                coords.join(" ")
            );
            if series.markers {
                for c in &coords {
                    let (x, y) = c.split_once(',').expect("formatted pair");
                    let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 12.0 + 16.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Numeric columns of a CSV file; empty cells are `None`.
struct Table {
    columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::MalformedCsv(e.to_string()))?;
        let headers: Vec<String> = r
            .headers()
            .map_err(|e| Error::MalformedCsv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns: BTreeMap<String, Vec<Option<f64>>> =
            headers.iter().map(|h| (h.clone(), Vec::new())).collect();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::MalformedCsv(e.to_string()))?;
            for (h, cell) in headers.iter().zip(rec.iter()) {
                let v = if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        Error::MalformedCsv(format!(
                            "row {}: column {h} has non-numeric '{cell}'",
                            rows + 1
                        ))
                    })?)
                };
                columns.get_mut(h).expect("header").push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::MalformedCsv(format!(
                "{} has no data rows",
                path.display()
            )));
        }
        Ok(Self { columns })
    }

    fn col(&self, name: &str) -> Option<&[Option<f64>]> {
        self.columns.get(name).map(|v| v.as_slice())
    }

    fn pairs(&self, x: &str, y: &str) -> Vec<(f64, f64)> {
        match (self.col(x), self.col(y)) {
            (Some(xs), Some(ys)) => xs
                .iter()
                .zip(ys)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect(),
            _ => Vec::new(),
        }
    }
}

const METRIC_PANELS: [(&str, &str); 6] = [
    ("e_hat", "mean difference Ê"),
    ("omega_hat", "constraint Ω̂"),
    ("lambda", "multiplier λ"),
    ("loss", "critic objective"),
    ("chi2_oracle", "oracle χ²"),
    ("chi2_kde_proxy", "KDE χ² proxy"),
];

/// Renders one SVG per panel of a metrics or Fig-2 sweep CSV into `out_dir`
/// and returns the written paths. Nothing is written on error.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let table = Table::read(csv_path)?;
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot")
        .to_string();
    let plots: Vec<(String, LinePlot)> = if table.col("iter").is_some() {
        metric_panels(&table)
    } else if table.col("shift").is_some() {
        super::fig2::panels(&super::fig2::read_rows(csv_path)?)
    } else {
        return Err(Error::MalformedCsv(
            "expected an 'iter' column (metrics) or a 'shift' column (sweep)".into(),
        ));
    };
    if plots.is_empty() {
        return Err(Error::MalformedCsv("no plottable columns".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, plot) in plots {
        let path = out_dir.join(format!("{stem}_{name}.svg"));
        std::fs::write(&path, plot.to_svg())?;
        written.push(path);
    }
    Ok(written)
}

fn metric_panels(table: &Table) -> Vec<(String, LinePlot)> {
    METRIC_PANELS
        .iter()
        .filter_map(|(col, label)| {
            let points = table.pairs("iter", col);
            (!points.is_empty()).then(|| {
                (
                    col.to_string(),
                    LinePlot {
                        title: label.to_string(),
                        x_label: "iteration".into(),
                        y_label: col.to_string(),
                        log_x: false,
                        log_y: false,
                        series: vec![Series {
                            markers: points.len() < 50,
                            ..Series::line(*col, points)
                        }],
                    },
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_numbers() {
        let a = Axis::fit([0.03, 0.97].into_iter(), false);
        let t: Vec<String> = a.ticks().into_iter().map(fmt_tick).collect();
        assert_eq!(t, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
        let l = Axis::fit([0.002, 0.3].into_iter(), true);
        assert_eq!(l.ticks(), vec![0.001, 0.01, 0.1, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(1e-4), "1e-4");
    }

    #[test]
    fn empty_csv_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(
            &csv,
            "iter,e_hat,omega_hat,lambda,loss,chi2_oracle,chi2_kde_proxy,wall_ms\n",
        )
        .unwrap();
        let out = dir.path().join("plots");
        assert!(matches!(
            emit_plots(&csv, &out),
            Err(Error::MalformedCsv(_))
        ));
        assert!(!out.exists());
    }

    #[test]
    fn non_numeric_cells_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(&csv, "iter,lambda\n1,abc\n").unwrap();
        assert!(matches!(
            emit_plots(&csv, dir.path()),
            Err(Error::MalformedCsv(_))
        ));
    }
}
