//! Convergence report files: CSV, JSON and a standalone SVG plot.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use subdiff_core::convergence::{format_sig15, report_csv, ConvergenceReport};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Serialize)]
struct JsonRow {
    delta: f64,
    log2_delta: f64,
    error: Option<f64>,
    error_std_error: Option<f64>,
    sup_error: Option<f64>,
    excluded: usize,
}

#[derive(Debug, Serialize)]
struct JsonReport {
    rows: Vec<JsonRow>,
    slope: Option<f64>,
    intercept: Option<f64>,
    r_squared: Option<f64>,
    fit_error: Option<String>,
}

pub fn render_json(report: &ConvergenceReport) -> String {
    let fit = report.fit.as_ref().ok();
    let doc = JsonReport {
        rows: report
            .rows
            .iter()
            .map(|r| JsonRow {
                delta: r.delta,
                log2_delta: r.delta.log2(),
                error: r.error.map(|e| e.mean),
                error_std_error: r.error.map(|e| e.std_error),
                sup_error: r.sup_error.map(|e| e.mean),
                excluded: r.excluded,
            })
            .collect(),
        slope: fit.map(|f| f.slope),
        intercept: fit.map(|f| f.intercept),
        r_squared: fit.map(|f| f.r_squared),
        fit_error: report.fit.as_ref().err().map(|e| e.to_string()),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
    out.push('\n');
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Log-log plot: one `<circle>` per row with an error, one `<line>` for the
/// fit when it exists. The frame is a `<rect>` so the line count stays one.
pub fn render_svg(report: &ConvergenceReport) -> String {
    let points: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter_map(|r| r.error.map(|e| (r.delta.log2(), e.mean.log2())))
        .filter(|(_, y)| y.is_finite())
        .collect();
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = points.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let p = ((hi - lo) * 0.05).max(0.5);
        (lo - p, hi + p)
    };
    let (x_lo, x_hi) = pad(x_lo, x_hi);
    let (y_lo, y_hi) = pad(y_lo, y_hi);
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);
    let f = format_sig15;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        WIDTH, HEIGHT, WIDTH, HEIGHT
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN,
        m = MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">log2 delta</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{}" transform="rotate(-90 20 {})" text-anchor="middle">log2 error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for &(x, y) in &points {
        let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="4" fill="black"/>"#, f(sx(x)), f(sy(y)));
    }
    if let Ok(fit) = &report.fit {
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="red"/>"#,
            f(sx(x_lo)),
            f(sy(fit.slope * x_lo + fit.intercept)),
            f(sx(x_hi)),
            f(sy(fit.slope * x_hi + fit.intercept))
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">y = {} x + {}</text>"#,
            MARGIN + 10.0,
            MARGIN + 20.0,
            f(fit.slope),
            f(fit.intercept)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render(report: &ConvergenceReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => report_csv(report),
        ReportFormat::Json => render_json(report),
        ReportFormat::Svg => render_svg(report),
    }
}

pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render(report, format)).map_err(|e| CliError::io(path, e))
}

/// Rows `(delta, error)` read back from the CSV form; missing errors are NaN.
pub fn parse_csv_rows(text: &str) -> Result<Vec<(f64, f64, usize)>, CliError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Usage(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("column {i}: {e}")))
        };
        let excluded = field(4)
            .parse::<usize>()
            .map_err(|e| CliError::Usage(format!("column 4: {e}")))?;
        rows.push((num(0)?, num(2)?, excluded));
    }
    Ok(rows)
}
