//! SVG panels: a density histogram with the fitted curve on top.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::distributions::{FittedModel, Histogram};
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const CURVE_POINTS: usize = 241;
const TICKS: usize = 5;

#[derive(Debug, Clone)]
pub struct PlotPanel {
    /// Population label, e.g. `correct`.
    pub population: String,
    pub histogram: Histogram,
    pub model: FittedModel,
}

impl PlotPanel {
    pub fn file_name(&self) -> String {
        format!("{}_{}.svg", self.population, self.model.family)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders one panel. Output depends only on the inputs.
pub fn render_svg(panel: &PlotPanel) -> String {
    let h = &panel.histogram;
    let (x0, x1) = (h.lo, h.hi);
    let curve: Vec<(f64, f64)> = (0..CURVE_POINTS)
        .map(|i| {
            let x = x0 + (x1 - x0) * i as f64 / (CURVE_POINTS - 1) as f64;
            (x, panel.model.pdf(x))
        })
        .collect();
    let y_max = h
        .density
        .iter()
        .copied()
        .chain(curve.iter().map(|p| p.1))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - (y / y_max).min(1.0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{} matches, {} fit</text>"#,
        WIDTH / 2.0,
        escape(&panel.population),
        panel.model.family
    );

    let bw = h.bin_width();
    for (i, &d) in h.density.iter().enumerate() {
        let left = sx(h.lo + i as f64 * bw);
        let right = sx(h.lo + (i + 1) as f64 * bw);
        let top = sy(d);
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#4a7fa8" stroke-width="0.5"/>"##,
            left,
            top,
            (right - left).max(0.0),
            (TOP + plot_h - top).max(0.0)
        );
    }

    let mut points = String::new();
    for (i, &(x, y)) in curve.iter().enumerate() {
        if i > 0 {
            points.push(' ');
        }
        let _ = write!(points, "{:.2},{:.2}", sx(x), sy(y));
    }
    let _ = writeln!(
        s,
        r##"<polyline class="fit" points="{points}" fill="none" stroke="#d62728" stroke-width="1.5"/>"##
    );

    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h
    );
    for t in 0..=TICKS {
        let frac = t as f64 / TICKS as f64;
        let x = x0 + frac * (x1 - x0);
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0,
            tick_label(x)
        );
        let y = frac * y_max;
        let py = sy(y);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">distance</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">density</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    // legend
    let lx = LEFT + plot_w - 190.0;
    let _ = writeln!(
        s,
        r##"<g class="legend"><rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="#9ecae1" stroke="#4a7fa8"/><text x="{:.2}" y="{:.2}">histogram (n={})</text>"##,
        TOP + 6.0,
        lx + 20.0,
        TOP + 15.0,
        h.total
    );
    let _ = writeln!(
        s,
        r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="1.5"/><text x="{:.2}" y="{:.2}">{} fit (sse={:.3e})</text></g>"##,
        TOP + 27.0,
        lx + 14.0,
        TOP + 27.0,
        lx + 20.0,
        TOP + 31.0,
        panel.model.family,
        panel.model.sse
    );
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".to_string()
    } else if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a < 1.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.2}")
    }
}

/// Writes one SVG per panel into `dir` and returns the paths.
pub fn emit_plots(panels: &[PlotPanel], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    panels
        .iter()
        .map(|p| {
            let path = dir.join(p.file_name());
            fs::write(&path, render_svg(p))?;
            Ok(path)
        })
        .collect()
}
