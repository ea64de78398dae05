//! Static SVG plots: front scatters and α-curves. Output depends only on
//! the input tables, so identical inputs give identical bytes.

use crate::error::{Error, Result};
use crate::eval::Metric;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Data-to-pixel mapping of the plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Frame {
    /// Bounds covering `points`, padded by 5%; `[0, 1]` on an empty axis.
    pub fn fit(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for (a, b) in points {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let pad = |(lo, hi): (f64, f64)| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-9 {
                (lo - 0.05, hi + 0.05)
            } else {
                let p = 0.05 * (hi - lo);
                (lo - p, hi + p)
            }
        };
        Self { x: pad(x), y: pad(y) }
    }

    pub fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.x.0) / (self.x.1 - self.x.0);
        let fy = (y - self.y.0) / (self.y.1 - self.y.0);
        (LEFT + fx * (WIDTH - LEFT - RIGHT), HEIGHT - BOTTOM - fy * (HEIGHT - TOP - BOTTOM))
    }
}

/// One named set of points; `line` joins them in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub line: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `x_ticks` replaces the numeric x labels, e.g. for a log axis with zero.
pub fn chart(title: &str, x_label: &str, y_label: &str, series: &[Series], x_ticks: Option<&[(f64, String)]>) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let (x1, y1) = (WIDTH - RIGHT, TOP);
    let _ = writeln!(svg, r#"<path d="M{x0} {y1} V{y0} H{x1}" fill="none" stroke="black"/>"#);
    let ticks: Vec<(f64, String)> = match x_ticks {
        Some(t) => t.to_vec(),
        None => (0..=4)
            .map(|i| {
                let v = frame.x.0 + (frame.x.1 - frame.x.0) * f64::from(i) / 4.0;
                (v, format!("{v:.3}"))
            })
            .collect(),
    };
    for (v, label) in ticks {
        let (px, _) = frame.px(v, frame.y.0);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            escape(&label)
        );
    }
    for i in 0..=4 {
        let v = frame.y.0 + (frame.y.1 - frame.y.0) * f64::from(i) / 4.0;
        let (_, py) = frame.px(frame.x.0, v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    if series.iter().all(|s| s.points.is_empty()) {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" fill="gray">no points</text>"#, (x0 + x1) / 2.0, (y0 + y1) / 2.0);
    }
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(a, b)| frame.px(a, b)).collect();
        if s.line && pts.len() > 1 {
            let d: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, d.join(" "));
        }
        for (px, py) in &pts {
            let _ = writeln!(svg, "{}", marker(k, *px, *py, color));
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"{}<text x="{}" y="{}">{}</text>"#,
            marker(k, x1 + 15.0, ly, color),
            x1 + 25.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Circle, square, triangle and diamond, cycling.
fn marker(k: usize, x: f64, y: f64, color: &str) -> String {
    match k % 4 {
        0 => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#),
        1 => format!(r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/>"#, x - 4.0, y - 4.0),
        2 => format!(
            r#"<path d="M{x:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2} Z" fill="{color}"/>"#,
            y - 5.0,
            x + 5.0,
            y + 4.0,
            x - 5.0,
            y + 4.0
        ),
        _ => format!(
            r#"<path d="M{x:.2} {:.2} L{:.2} {y:.2} L{x:.2} {:.2} L{:.2} {y:.2} Z" fill="{color}"/>"#,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0
        ),
    }
}

/// Rows of a CSV as maps from header to cell.
pub fn read_table(text: &str, required: &[&str]) -> Result<Vec<BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == *c)) {
        return Err(Error::Format(format!("missing column '{missing}'")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(headers.iter().cloned().zip(rec.iter().map(str::to_string)).collect());
    }
    Ok(rows)
}

fn number(row: &BTreeMap<String, String>, col: &str) -> Result<Option<f64>> {
    let v = &row[col];
    if v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("column '{col}': cannot parse '{v}'")))
}

/// Scatter of a front CSV: unfairness metric against test AUC_y, one
/// series per model family in order of first appearance.
pub fn front_svg(front_csv: &str, metric: Metric, title: &str) -> Result<String> {
    let rows = read_table(front_csv, &["model", "auc", metric.name()])?;
    let mut series: Vec<Series> = Vec::new();
    for row in &rows {
        let (Some(x), Some(y)) = (number(row, metric.name())?, number(row, "auc")?) else {
            continue;
        };
        let name = &row["model"];
        match series.iter_mut().find(|s| &s.name == name) {
            Some(s) => s.points.push((x, y)),
            None => series.push(Series {
                name: name.clone(),
                points: vec![(x, y)],
                line: false,
            }),
        }
    }
    Ok(chart(title, &metric.name().to_uppercase(), "AUC_y", &series, None))
}

/// x position of α on the curve: log10 α, with α = 0 one decade left of
/// the smallest positive α.
pub fn alpha_position(alpha: f64, smallest_positive: f64) -> f64 {
    if alpha > 0.0 {
        alpha.log10()
    } else {
        smallest_positive.log10() - 1.0
    }
}

/// AUC_y and AUC_s medians against log10 α for one family of a medians CSV.
pub fn alpha_curve_svg(medians_csv: &str, family_name: &str) -> Result<String> {
    let rows = read_table(medians_csv, &["model", "alpha", "auc", "auc_s"])?;
    let mut pts: Vec<(f64, Option<f64>, Option<f64>)> = Vec::new();
    for row in rows.iter().filter(|r| r["model"] == family_name) {
        let alpha = number(row, "alpha")?.ok_or_else(|| Error::Format("empty alpha".into()))?;
        pts.push((alpha, number(row, "auc")?, number(row, "auc_s")?));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let smallest = pts.iter().map(|p| p.0).find(|&a| a > 0.0).unwrap_or(1.0);
    let pos = |a: f64| alpha_position(a, smallest);
    let curve = |name: &str, pick: &dyn Fn(&(f64, Option<f64>, Option<f64>)) -> Option<f64>| Series {
        name: name.into(),
        points: pts.iter().filter_map(|p| pick(p).map(|v| (pos(p.0), v))).collect(),
        line: true,
    };
    let series = [curve("AUC_y", &|p| p.1), curve("AUC_s", &|p| p.2)];
    let ticks: Vec<(f64, String)> = pts
        .iter()
        .map(|p| (pos(p.0), if p.0 > 0.0 { format!("{}", p.0.log10().round()) } else { "α=0".into() }))
        .collect();
    let ticks = (!ticks.is_empty()).then_some(ticks.as_slice());
    Ok(chart(&format!("{family_name}: AUC vs fairness trade-off"), "log10 α", "median AUC", &series, ticks))
}

/// Writes every plot for a sweep directory into `out/plots/`.
pub fn plot_dir(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for metric in Metric::ALL {
        let path = out.join("fronts").join(format!("{}_overall.csv", metric.name()));
        let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let svg = front_svg(&text, metric, &format!("Overall front, {}", metric.name().to_uppercase()))?;
        let target = dir.join(format!("front_{}.svg", metric.name()));
        fs::write(&target, svg)?;
        written.push(target);
    }
    let medians = out.join("medians.csv");
    let text = fs::read_to_string(&medians).map_err(|e| Error::Format(format!("{}: {e}", medians.display())))?;
    let mut families: Vec<String> = read_table(&text, &["model"])?.into_iter().map(|r| r["model"].clone()).collect();
    families.dedup();
    for name in families {
        let svg = alpha_curve_svg(&text, &name)?;
        let slug: String = name.to_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
        let target = dir.join(format!("alpha_curve_{slug}.svg"));
        fs::write(&target, svg)?;
        written.push(target);
    }
    Ok(written)
}
