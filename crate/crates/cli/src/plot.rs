//! Log-log SVG plot of `sup_error` against `t`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;
const FLOOR: f64 = 1e-16;

/// One parsed convergence curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn read_curve(path: &Path) -> CliResult<(Vec<String>, Curve)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::SchemaMismatch(format!("{} has no `{name}` column", path.display())))
    };
    let (ti, ei) = (col("t")?, col("sup_error")?);
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CliError::SchemaMismatch(format!("bad number in {}", path.display())))
        };
        points.push((parse(ti)?, parse(ei)?));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((header, Curve { label, points }))
}

/// Pointwise median over curves, on the `t` values shared by all of them.
pub fn median_curve(curves: &[Curve]) -> Curve {
    let ts: Vec<f64> = curves[0]
        .points
        .iter()
        .map(|p| p.0)
        .filter(|t| curves.iter().all(|c| c.points.iter().any(|p| p.0 == *t)))
        .collect();
    let points = ts
        .into_iter()
        .map(|t| {
            let vals: Vec<f64> = curves
                .iter()
                .map(|c| c.points.iter().find(|p| p.0 == t).map_or(f64::NAN, |p| p.1))
                .collect();
            (t, qconv_core::stats::median(&vals))
        })
        .collect();
    Curve {
        label: "median".into(),
        points,
    }
}

/// Summary of a written plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSummary {
    pub path: PathBuf,
    /// One per input plus the median.
    pub n_curves: usize,
}

/// Reads CSVs that share one schema and writes an SVG with one curve per
/// file plus their median.
pub fn emit_convergence_plot(csv_paths: &[PathBuf], out: &Path) -> CliResult<PlotSummary> {
    if csv_paths.is_empty() {
        return Err(CliError::SchemaMismatch("no input CSVs".into()));
    }
    let mut header0: Option<Vec<String>> = None;
    let mut curves = Vec::with_capacity(csv_paths.len());
    for p in csv_paths {
        let (header, curve) = read_curve(p)?;
        match &header0 {
            None => header0 = Some(header),
            Some(h) if *h != header => {
                return Err(CliError::SchemaMismatch(format!(
                    "{} has columns {header:?}, expected {h:?}",
                    p.display()
                )))
            }
            _ => {}
        }
        curves.push(curve);
    }
    curves.push(median_curve(&curves));
    let svg = render(&curves);
    std::fs::write(out, svg).map_err(|e| CliError::io(out, e))?;
    Ok(PlotSummary {
        path: out.to_path_buf(),
        n_curves: curves.len(),
    })
}

fn render(curves: &[Curve]) -> String {
    let visible = |p: &&(f64, f64)| p.0 >= 1.0 && p.1.is_finite();
    let xs = curves
        .iter()
        .flat_map(|c| c.points.iter().filter(visible).map(|p| p.0.log10()));
    let ys = curves
        .iter()
        .flat_map(|c| c.points.iter().filter(visible).map(|p| p.1.max(FLOOR).log10()));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">log10 t</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="14" transform="rotate(-90 15 {})" text-anchor="middle">log10 sup_error</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (v, x) in [(x0, l), (x1, r)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            b + 15.0
        );
    }
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            l - 5.0
        );
    }
    let last = curves.len() - 1;
    for (i, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(visible)
            .map(|p| format!("{:.2},{:.2}", sx(p.0.log10()), sy(p.1.max(FLOOR).log10())))
            .collect();
        let (stroke, width) = if i == last { ("black", 2.5) } else { ("steelblue", 1.0) };
        let _ = writeln!(
            s,
            r#"<polyline data-label="{}" points="{}" stroke="{stroke}" stroke-width="{width}" fill="none" opacity="0.8"/>"#,
            c.label,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
