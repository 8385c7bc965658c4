//! Minimal deterministic SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::metrics::MetricSeries;

/// Values below this are drawn at this level on logarithmic axes.
pub const LOG_FLOOR: f64 = 1e-18;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: AxisScale,
    pub y_scale: AxisScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub series: MetricSeries,
    pub dashed: bool,
    /// Index into the color palette; lines sharing a color belong together.
    pub color: usize,
}

struct Axis {
    scale: AxisScale,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(scale: AxisScale, values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if scale == AxisScale::Log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if scale == AxisScale::Log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Self { scale, lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.scale == AxisScale::Log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        match self.scale {
            AxisScale::Log => {
                let span = (self.hi - self.lo) as i64;
                let every = (span / 8).max(1);
                (self.lo as i64..=self.hi as i64)
                    .filter(|e| (e - self.lo as i64) % every == 0)
                    .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                    .collect()
            }
            AxisScale::Linear => (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (v, format!("{}", (v * 1000.0).round() / 1000.0))
                })
                .collect(),
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one polyline per line. On log axes, nonpositive ordinates are
/// clamped to [`LOG_FLOOR`] and nonpositive abscissae dropped; both are
/// recorded in comments.
pub fn render_svg(spec: &PlotSpec, lines: &[Line]) -> Result<String> {
    if lines.is_empty() || lines.iter().all(|l| l.series.is_empty()) {
        return Err(Error::EmptySeries);
    }
    let mut notes = Vec::new();
    let mut prepared: Vec<Vec<(f64, f64)>> = Vec::with_capacity(lines.len());
    for l in lines {
        let mut pts = Vec::with_capacity(l.series.len());
        for (i, &(x, y)) in l.series.points.iter().enumerate() {
            if spec.x_scale == AxisScale::Log && !(x > 0.0) {
                notes.push(format!("dropped: series \"{}\" point {i} (x = {x})", l.series.label));
                continue;
            }
            let y = if spec.y_scale == AxisScale::Log && !(y > LOG_FLOOR) {
                if !(y >= LOG_FLOOR) {
                    notes.push(format!("clamped: series \"{}\" point {i} (y = {y:e})", l.series.label));
                }
                LOG_FLOOR
            } else {
                y
            };
            if !x.is_finite() || !y.is_finite() {
                notes.push(format!("dropped: series \"{}\" point {i} (non-finite)", l.series.label));
                continue;
            }
            pts.push((x, y));
        }
        prepared.push(pts);
    }
    if prepared.iter().all(Vec::is_empty) {
        return Err(Error::EmptySeries);
    }
    let xa = Axis::fit(spec.x_scale, prepared.iter().flatten().map(|p| p.0));
    let ya = Axis::fit(spec.y_scale, prepared.iter().flatten().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + pw * xa.frac(x);
    let py = |y: f64| TOP + ph * (1.0 - ya.frac(y));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    for n in &notes {
        let _ = writeln!(s, "<!-- {} -->", esc(n).replace("--", "- -"));
    }
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, esc(&spec.title));
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            esc(&label)
        );
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            esc(&label)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0, esc(&spec.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&spec.y_label)
    );
    for (k, (l, pts)) in lines.iter().zip(&prepared).enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[l.color % PALETTE.len()];
        let dash = if l.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, coords.join(" "));
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let lx = WIDTH - RIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            esc(&l.series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(spec: &PlotSpec, lines: &[Line], path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(spec, lines)?)?;
    Ok(())
}
