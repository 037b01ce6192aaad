//! Deterministic SVG rendering of cumulative-regret curves.

use std::fmt::Write as _;
use std::path::Path;

use pucb_core::harness::{read_records, regret_band, BandPoint, HarnessError};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 190.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;
const MAX_POINTS: usize = 400;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// Privacy budget parsed from an `-eps<ε>` stem suffix, if any.
    pub epsilon: Option<f64>,
    pub band: Vec<BandPoint>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0} carries a truncation marker (pass --allow-partial to plot it anyway)")]
    Truncated(String),
    #[error("{0} contains no records")]
    Empty(String),
}

/// Extracts ε from stems such as `sweep-eps0.1` or `run-epsinf`.
pub fn epsilon_from_stem(stem: &str) -> Option<f64> {
    let (_, tail) = stem.rsplit_once("-eps")?;
    match tail {
        "inf" => Some(f64::INFINITY),
        other => other.parse().ok().filter(|e: &f64| *e > 0.0),
    }
}

pub fn load_series(path: &Path, allow_partial: bool) -> Result<Series, PlotError> {
    let file = read_records(path)?;
    let name = path.display().to_string();
    if file.is_truncated() && !allow_partial {
        return Err(PlotError::Truncated(name));
    }
    let replicas = file.by_replica();
    if replicas.is_empty() {
        return Err(PlotError::Empty(name));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(name);
    Ok(Series {
        epsilon: epsilon_from_stem(&label),
        label,
        band: regret_band(&replicas),
    })
}

/// Legend order: series with a parsed ε by increasing ε (noise-free last),
/// then the rest in input order.
pub fn order_series(series: &mut [Series]) {
    series.sort_by(|a, b| match (a.epsilon, b.epsilon) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
}

fn nice_step(span: f64, ticks: usize) -> f64 {
    let raw = span / ticks as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    let residual = raw / magnitude;
    let nice = if residual <= 1.0 {
        1.0
    } else if residual <= 2.0 {
        2.0
    } else if residual <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * magnitude
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn thin(points: &[BandPoint]) -> Vec<BandPoint> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<BandPoint> = points.iter().step_by(stride).copied().collect();
    if out.last() != points.last() {
        out.push(*points.last().unwrap());
    }
    out
}

/// Renders the series in the order given.
pub fn render_svg(series: &[Series], title: &str) -> String {
    let noise_free = series.iter().any(|s| s.epsilon == Some(f64::INFINITY));
    let x_max = series
        .iter()
        .filter_map(|s| s.band.last().map(|p| p.episode as f64))
        .fold(1.0, f64::max);
    let y_data = series
        .iter()
        .flat_map(|s| s.band.iter().map(|p| p.mean + p.std))
        .fold(0.0, f64::max);
    let y_step = nice_step(if y_data > 0.0 { y_data } else { 1.0 }, 5);
    let y_max = (y_data / y_step).ceil().max(1.0) * y_step;
    let x_step = nice_step(x_max, 5);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + x / x_max * plot_w;
    let py = |y: f64| MARGIN_TOP + plot_h - y.clamp(0.0, y_max) / y_max * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let full_title = if noise_free {
        format!("{title} [NOISE-FREE: not private]")
    } else {
        title.to_string()
    };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        fmt_num(MARGIN_LEFT + plot_w / 2.0),
        escape(&full_title)
    );
    if noise_free {
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="48" fill="#d62728" fill-opacity="0.12" transform="rotate(-20 {} {})">noise-free</text>"##,
            fmt_num(MARGIN_LEFT + plot_w / 2.0),
            fmt_num(MARGIN_TOP + plot_h / 2.0),
            fmt_num(MARGIN_LEFT + plot_w / 2.0),
            fmt_num(MARGIN_TOP + plot_h / 2.0)
        );
    }

    // axes and ticks
    let _ = writeln!(
        svg,
        r#"<g stroke="black" fill="none"><line x1="{0}" y1="{1}" x2="{2}" y2="{1}"/><line x1="{0}" y1="{3}" x2="{0}" y2="{1}"/></g>"#,
        fmt_num(MARGIN_LEFT),
        fmt_num(MARGIN_TOP + plot_h),
        fmt_num(MARGIN_LEFT + plot_w),
        fmt_num(MARGIN_TOP)
    );
    let mut tick = 0.0;
    while tick <= x_max + 1e-9 {
        let x = px(tick);
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"#,
            fmt_num(x),
            fmt_num(MARGIN_TOP + plot_h),
            fmt_num(MARGIN_TOP + plot_h + 5.0),
            fmt_num(MARGIN_TOP + plot_h + 20.0),
            fmt_num(tick)
        );
        tick += x_step;
    }
    let mut tick = 0.0;
    while tick <= y_max + 1e-9 {
        let y = py(tick);
        let _ = writeln!(
            svg,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><line x1="{2}" y1="{1}" x2="{3}" y2="{1}" stroke="#dddddd"/><text x="{4}" y="{5}" text-anchor="end">{6}</text>"##,
            fmt_num(MARGIN_LEFT - 5.0),
            fmt_num(y),
            fmt_num(MARGIN_LEFT),
            fmt_num(MARGIN_LEFT + plot_w),
            fmt_num(MARGIN_LEFT - 8.0),
            fmt_num(y + 4.0),
            fmt_num(tick)
        );
        tick += y_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#,
        fmt_num(MARGIN_LEFT + plot_w / 2.0),
        fmt_num(HEIGHT - 15.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">cumulative regret</text>"#,
        fmt_num(MARGIN_TOP + plot_h / 2.0)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points = thin(&s.band);
        if points.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in &points {
            let _ = write!(band, "{},{} ", fmt_num(px(p.episode as f64)), fmt_num(py(p.mean + p.std)));
        }
        for p in points.iter().rev() {
            let _ = write!(band, "{},{} ", fmt_num(px(p.episode as f64)), fmt_num(py(p.mean - p.std)));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = points
            .iter()
            .map(|p| format!("{},{}", fmt_num(px(p.episode as f64)), fmt_num(py(p.mean))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 20.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="3"/><text x="{3}" y="{4}">{5}</text>"#,
            fmt_num(lx),
            fmt_num(ly),
            fmt_num(lx + 20.0),
            fmt_num(lx + 26.0),
            fmt_num(ly + 4.0),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
