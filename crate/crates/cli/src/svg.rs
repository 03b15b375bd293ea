//! Deterministic SVG heatmaps of task spaces.

use std::fmt::Write as _;

use taskspace::analytics::{Metric, TaskSpace};

const CELL: usize = 24;
const LABEL: usize = 180;
const LEGEND_W: usize = 16;
const PAD: usize = 12;

type Rgb = (f64, f64, f64);

const NEGATIVE: Rgb = (59.0, 76.0, 192.0);
const WHITE: Rgb = (255.0, 255.0, 255.0);
const POSITIVE: Rgb = (180.0, 4.0, 38.0);
const DARK: Rgb = (8.0, 48.0, 107.0);
const MISSING: &str = "#bdbdbd";

fn lerp(a: Rgb, b: Rgb, t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |x: f64, y: f64| (x + (y - x) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Color scale of a space: diverging around 0 over `[-m, m]` for signed
/// metrics, sequential over `[0, m]` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Diverging(f64),
    Sequential(f64),
}

impl Scale {
    pub fn for_space(space: &TaskSpace) -> Self {
        let max_abs = space.values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let bounded = !matches!(space.metric, Metric::Wasserstein);
        let m = if bounded { 1.0 } else { max_abs.max(f64::MIN_POSITIVE) };
        if space.metric.is_signed() || space.metric == Metric::WassersteinSimilarity {
            Scale::Diverging(m.max(max_abs))
        } else {
            Scale::Sequential(m)
        }
    }

    pub fn color(self, v: f64) -> String {
        match self {
            Scale::Diverging(m) if v < 0.0 => lerp(WHITE, NEGATIVE, -v / m),
            Scale::Diverging(m) => lerp(WHITE, POSITIVE, v / m),
            Scale::Sequential(m) => lerp(WHITE, DARK, v / m),
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Scale::Diverging(m) => (-m, m),
            Scale::Sequential(m) => (0.0, m),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One `rect.cell` per matrix entry, row labels on the left, column labels
/// rotated above, a color legend on the right.
pub fn heatmap(space: &TaskSpace, title: &str) -> String {
    let n = space.len();
    let scale = Scale::for_space(space);
    let grid = n * CELL;
    let width = LABEL + grid + PAD * 2 + LEGEND_W + 60;
    let height = LABEL + grid + PAD * 2;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="13">{}</text>"#, PAD + 4, escape(title));
    for (i, task) in space.tasks.iter().enumerate() {
        let y = LABEL + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            LABEL - 6,
            escape(task)
        );
        let x = LABEL + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-90 {x} {})">{}</text>"#,
            LABEL - 6,
            LABEL - 6,
            escape(task)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (LABEL + j * CELL, LABEL + i * CELL);
            let (fill, label) = match space.get(i, j) {
                Some(v) => (scale.color(v), format!("{v:.4}")),
                None => (MISSING.to_string(), "missing".to_string()),
            };
            let _ = writeln!(
                s,
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff" stroke-width="0.5"><title>{} / {}: {label}</title></rect>"##,
                escape(&space.tasks[i]),
                escape(&space.tasks[j])
            );
        }
    }
    let (lo, hi) = scale.range();
    let lx = LABEL + grid + PAD;
    let steps = 20;
    let h = grid.max(CELL * 4);
    for k in 0..steps {
        let v = hi - (hi - lo) * (k as f64 + 0.5) / steps as f64;
        let y0 = LABEL + k * h / steps;
        let y1 = LABEL + (k + 1) * h / steps;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{y0}" width="{LEGEND_W}" height="{}" fill="{}"/>"#,
            y1 - y0,
            scale.color(v)
        );
    }
    let tx = lx + LEGEND_W + 4;
    let _ = writeln!(s, r#"<text x="{tx}" y="{}">{hi:.3}</text>"#, LABEL + 8);
    let _ = writeln!(s, r#"<text x="{tx}" y="{}">{lo:.3}</text>"#, LABEL + h);
    s.push_str("</svg>\n");
    s
}
