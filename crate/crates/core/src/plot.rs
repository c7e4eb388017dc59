//! Deterministic SVG line charts with error bars.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::report::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `k_shot` against `mean_accuracy ± ci95`.
    AccuracyVsShots,
    /// `k_shot` against `lambda_mean ± lambda_std`.
    LambdaVsShots,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::AccuracyVsShots => "accuracy-vs-shots",
            PlotKind::LambdaVsShots => "lambda-vs-shots",
        }
    }

    fn columns(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::AccuracyVsShots => ("mean_accuracy", "ci95"),
            PlotKind::LambdaVsShots => ("lambda_mean", "lambda_std"),
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy-vs-shots" => Ok(PlotKind::AccuracyVsShots),
            "lambda-vs-shots" => Ok(PlotKind::LambdaVsShots),
            other => Err(Error::Usage(format!(
                "unknown plot kind {other:?} (expected accuracy-vs-shots or lambda-vs-shots)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

/// Columns naming the series a row belongs to, checked in this order.
const SERIES_COLUMNS: [&str; 2] = ["series", "mode"];

/// Groups rows into series by the first of `series` or `mode` present,
/// sorting each series by `k_shot`.
pub fn series_from_table(table: &Table, kind: PlotKind) -> Result<Vec<Series>> {
    let (y_col, err_col) = kind.columns();
    let xs = table.numeric_column("k_shot")?;
    let ys = table.numeric_column(y_col)?;
    let errs = table.numeric_column(err_col)?;
    if xs.is_empty() {
        return Err(Error::Data("csv has no data rows".into()));
    }
    let names = match SERIES_COLUMNS.iter().find(|c| table.has_column(c)) {
        Some(c) => table.text_column(c)?,
        None => vec![kind.columns().0.to_string(); xs.len()],
    };
    let mut groups: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    for (((x, y), err), name) in xs.into_iter().zip(ys).zip(errs).zip(names) {
        if !(x.is_finite() && y.is_finite() && err.is_finite()) {
            return Err(Error::Data(format!("non-finite value in series {name}")));
        }
        groups.entry(name).or_default().push(Point { x, y, err: err.abs() });
    }
    Ok(groups
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            Series { name, points }
        })
        .collect())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Value range of the y axis, padded and kept inside `[0, 1]`.
fn y_range(series: &[Series]) -> (f64, f64) {
    let points = series.iter().flat_map(|s| &s.points);
    let lo = points.clone().map(|p| p.y - p.err).fold(f64::INFINITY, f64::min);
    let hi = points.map(|p| p.y + p.err).fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { 0.1 * (hi - lo) } else { 0.05 };
    let (lo, hi) = ((lo - pad).max(0.0), (hi + pad).min(1.0));
    if hi > lo {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn x_ticks(series: &[Series]) -> Vec<f64> {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.x)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

pub fn render_svg(kind: PlotKind, series: &[Series]) -> Result<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Data("nothing to plot".into()));
    }
    let ticks = x_ticks(series);
    let (x_lo, x_hi) = if ticks.len() == 1 {
        (ticks[0] - 1.0, ticks[0] + 1.0)
    } else {
        (ticks[0], ticks[ticks.len() - 1])
    };
    let (y_lo, y_hi) = y_range(series);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let inset = 0.05 * plot_w;
    let sx = |x: f64| LEFT + inset + (x - x_lo) / (x_hi - x_lo) * (plot_w - 2.0 * inset);
    let sy = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;
    let (y_label, _) = kind.columns();

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).ok();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .ok();
    writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).ok();
    writeln!(
        w,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        kind.as_str()
    )
    .ok();
    writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .ok();

    for i in 0..=5 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 5.0;
        let y = sy(v);
        writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        )
        .ok();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            y + 4.0
        )
        .ok();
    }
    for &t in &ticks {
        let x = sx(t);
        let base = TOP + plot_h;
        writeln!(w, r#"<line x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, base + 5.0).ok();
        writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, base + 18.0).ok();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k_shot</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0
    )
    .ok();
    writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{y_label}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .ok();

    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = series
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        )
        .ok();
        for p in &series.points {
            let (x, top, bottom) = (sx(p.x), sy((p.y + p.err).min(y_hi)), sy((p.y - p.err).max(y_lo)));
            writeln!(
                w,
                r#"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="{color}"/>"#
            )
            .ok();
            for cap in [top, bottom] {
                writeln!(
                    w,
                    r#"<line x1="{:.2}" y1="{cap:.2}" x2="{:.2}" y2="{cap:.2}" stroke="{color}"/>"#,
                    x - 4.0,
                    x + 4.0
                )
                .ok();
            }
            writeln!(w, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sy(p.y)).ok();
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        writeln!(
            w,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        )
        .ok();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&series.name)).ok();
    }
    writeln!(w, "</svg>").ok();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        Table::read(text.as_bytes()).unwrap()
    }

    #[test]
    fn groups_and_sorts_series() {
        let t = table("mode,k_shot,mean_accuracy,ci95\nw,5,0.8,0.01\ncontrol,1,0.4,0.02\nw,1,0.6,0.02\n");
        let s = series_from_table(&t, PlotKind::AccuracyVsShots).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].name, "control");
        assert_eq!(s[1].points.iter().map(|p| p.x).collect::<Vec<_>>(), vec![1.0, 5.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let t = table("k_shot,lambda_mean\n1,0.5\n");
        let err = series_from_table(&t, PlotKind::LambdaVsShots).unwrap_err();
        assert!(err.to_string().contains("lambda_std"), "{err}");
    }

    #[test]
    fn empty_table_is_an_error() {
        let t = table("k_shot,lambda_mean,lambda_std\n");
        assert!(series_from_table(&t, PlotKind::LambdaVsShots).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_escapes_names() {
        let t = table("series,k_shot,lambda_mean,lambda_std\na<b,1,0.3,0.1\na<b,10,0.7,0.05\n");
        let s = series_from_table(&t, PlotKind::LambdaVsShots).unwrap();
        let one = render_svg(PlotKind::LambdaVsShots, &s).unwrap();
        assert_eq!(one, render_svg(PlotKind::LambdaVsShots, &s).unwrap());
        assert!(one.contains("a&lt;b"));
        assert!(one.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("lambda-vs-shots".parse::<PlotKind>().unwrap(), PlotKind::LambdaVsShots);
        assert!("pie".parse::<PlotKind>().is_err());
    }
}
