//! Self-contained SVG figures built from the runner's CSV outputs.

use std::fmt::Write as _;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, TaidError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `t` against step for one or more traces, with the linear floor.
    TTrace,
    /// Objective against step for one or more traces.
    LossVariance,
    /// Eval KL to the generator against teacher order, one line per objective.
    CapacityCurve,
    /// Head and tail mass per run.
    MassBars,
}

impl PlotKind {
    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::TTrace => &["step", "t"],
            PlotKind::LossVariance => &["step", "objective"],
            PlotKind::CapacityCurve => &["objective", "teacher_order", "eval_kl_generator"],
            PlotKind::MassBars => &["run", "head_mass", "tail_mass"],
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlotKind::TTrace => "t-trace",
            PlotKind::LossVariance => "loss-variance",
            PlotKind::CapacityCurve => "capacity-curve",
            PlotKind::MassBars => "mass-bars",
        })
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "t-trace" => Ok(PlotKind::TTrace),
            "loss-variance" => Ok(PlotKind::LossVariance),
            "capacity-curve" => Ok(PlotKind::CapacityCurve),
            "mass-bars" => Ok(PlotKind::MassBars),
            _ => Err(format!(
                "unknown plot kind `{s}` (t-trace, loss-variance, capacity-curve or mass-bars)"
            )),
        }
    }
}

/// A CSV file read into string cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let fail = |reason: String| TaidError::Format {
            path: path.into(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| fail(e.to_string()))?;
        let header = reader
            .headers()
            .map_err(|e| fail(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| fail(e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            path: path.into(),
            name: series_name(path),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TaidError::Format {
                path: self.path.clone(),
                reason: format!("missing column `{name}`"),
            })
    }

    fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.column(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect())
    }

    fn strings(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r.get(c).cloned().unwrap_or_default()).collect())
    }
}

/// Legend name: the parent directory for `trace.csv`, else the file stem.
fn series_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    if stem == "trace" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return parent.to_string();
        }
    }
    stem.to_string()
}

/// Checks every table against the kind's schema, naming the first missing
/// column.
pub fn check_schema(tables: &[Table], kind: PlotKind) -> Result<()> {
    if tables.is_empty() {
        return Err(TaidError::InvalidInput("no CSV inputs given".into()));
    }
    for t in tables {
        for col in kind.required_columns() {
            t.column(col)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

/// Renders the figure for `kind`. `t_start` positions the linear
/// reference on t-trace plots.
pub fn plot_emit(tables: &[Table], kind: PlotKind, t_start: f64) -> Result<String> {
    check_schema(tables, kind)?;
    match kind {
        PlotKind::TTrace => {
            let mut series = xy_series(tables, "step", "t")?;
            let n_max = series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0))
                .fold(0.0, f64::max);
            series.push(Series {
                name: "linear".into(),
                points: vec![(0.0, t_start), (n_max, 1.0)],
                dashed: true,
            });
            Ok(line_chart("Interpolation parameter", "step", "t", &series))
        }
        PlotKind::LossVariance => {
            let series = xy_series(tables, "step", "objective")?;
            Ok(line_chart("Training objective", "step", "objective", &series))
        }
        PlotKind::CapacityCurve => {
            let mut by_objective: Vec<Series> = Vec::new();
            for t in tables {
                let names = t.strings("objective")?;
                let xs = t.numbers("teacher_order")?;
                let ys = t.numbers("eval_kl_generator")?;
                for ((name, x), y) in names.into_iter().zip(xs).zip(ys) {
                    let (Some(x), Some(y)) = (x, y) else { continue };
                    match by_objective.iter_mut().find(|s| s.name == name) {
                        Some(s) => s.points.push((x, y)),
                        None => by_objective.push(Series {
                            name,
                            points: vec![(x, y)],
                            dashed: false,
                        }),
                    }
                }
            }
            for s in &mut by_objective {
                s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            Ok(line_chart("Student eval KL vs teacher capacity", "teacher order", "eval KL to generator", &by_objective))
        }
        PlotKind::MassBars => {
            let mut bars = Vec::new();
            for t in tables {
                let runs = t.strings("run")?;
                let label = t.column("label").ok();
                let heads = t.numbers("head_mass")?;
                let tails = t.numbers("tail_mass")?;
                for (i, run) in runs.into_iter().enumerate() {
                    let name = label
                        .and_then(|c| t.rows[i].get(c).cloned())
                        .filter(|l| !l.is_empty())
                        .unwrap_or(run);
                    bars.push((name, heads[i].unwrap_or(0.0), tails[i].unwrap_or(0.0)));
                }
            }
            Ok(bar_chart("Head and tail mass", &bars))
        }
    }
}

fn xy_series(tables: &[Table], x: &str, y: &str) -> Result<Vec<Series>> {
    tables
        .iter()
        .map(|t| {
            let xs = t.numbers(x)?;
            let ys = t.numbers(y)?;
            Ok(Series {
                name: t.name.clone(),
                points: xs
                    .into_iter()
                    .zip(ys)
                    .filter_map(|(a, b)| Some((a?, b?)))
                    .collect(),
                dashed: false,
            })
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(title: &str) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    )
    .unwrap();
    out
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn axes(out: &mut String, x_label: &str, y_label: &str, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    )
    .unwrap();
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let x = LEFT + f * pw;
        let y = TOP + ph - f * ph;
        writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            fmt_tick(x0 + f * (x1 - x0))
        )
        .unwrap();
        writeln!(
            out,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            fmt_tick(y0 + f * (y1 - y0))
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
}

fn legend(out: &mut String, entries: &[(String, &str, bool)]) {
    let x = WIDTH - RIGHT + 15.0;
    for (i, (name, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 22.0,
            x + 28.0,
            y + 4.0,
            escape(name)
        )
        .unwrap();
    }
}

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (xl, xh) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (yl, yh) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (x0, x1) = nice_range(xl, xh);
    let (y0, y1) = nice_range(yl, yh);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = svg_open(title);
    axes(&mut out, x_label, y_label, (x0, x1), (y0, y1));
    let mut entries = Vec::new();
    let mut solid = 0;
    for s in series {
        let color = if s.dashed {
            "#555"
        } else {
            solid += 1;
            PALETTE[(solid - 1) % PALETTE.len()]
        };
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        entries.push((s.name.clone(), color, s.dashed));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

fn bar_chart(title: &str, bars: &[(String, f64, f64)]) -> String {
    let mut out = svg_open(title);
    let y_max = bars.iter().map(|b| b.1.max(b.2)).fold(0.0, f64::max).max(1e-12) * 1.05;
    axes(&mut out, "run", "mass", (0.0, bars.len() as f64), (0.0, y_max));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let slot = pw / bars.len().max(1) as f64;
    let bw = slot * 0.35;
    for (i, (name, head, tail)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        for (j, (v, color)) in [(head, PALETTE[0]), (tail, PALETTE[1])].into_iter().enumerate() {
            let h = v / y_max * ph;
            writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{h:.2}" fill="{color}"><title>{} {}</title></rect>"#,
                x + j as f64 * bw,
                TOP + ph - h,
                escape(name),
                v
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            x + bw,
            TOP + ph + 32.0,
            escape(name)
        )
        .unwrap();
    }
    legend(
        &mut out,
        &[("head".to_string(), PALETTE[0], false), ("tail".to_string(), PALETTE[1], false)],
    );
    out.push_str("</svg>\n");
    out
}
