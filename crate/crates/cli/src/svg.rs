//! Stacked line charts as plain SVG text.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 150.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const GAP: f64 = 40.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

/// Keeps every `k`-th point plus the last one.
fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let k = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(k).copied().collect();
    if let Some(last) = points.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn bounds(panel: &Panel) -> ((f64, f64), (f64, f64)) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (-1.0, 1.0));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 * (1.0 + y0.abs()) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    ((x0, x1), (y0, y1))
}

pub fn render(panels: &[Panel]) -> String {
    let height = GAP + panels.len() as f64 * (PANEL_HEIGHT + GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (k, panel) in panels.iter().enumerate() {
        let top = GAP + k as f64 * (PANEL_HEIGHT + GAP);
        let ((x0, x1), (y0, y1)) = bounds(panel);
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(s, r#"<text x="{MARGIN_LEFT}" y="{:.1}" font-weight="bold">{}</text>"#, top - 6.0, escape(&panel.title));
        for (v, anchor_y) in [(y1, top + 10.0), (y0, top + PANEL_HEIGHT)] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{anchor_y:.1}" text-anchor="end">{}</text>"#, MARGIN_LEFT - 4.0, fmt_tick(v));
        }
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
                sx(v),
                top + PANEL_HEIGHT + 14.0,
                fmt_tick(v)
            );
        }
        if y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_LEFT}" x2="{:.1}" y1="{:.2}" y2="{:.2}" stroke="#ccc" stroke-dasharray="3,3"/>"##,
                MARGIN_LEFT + plot_w,
                sy(0.0),
                sy(0.0)
            );
        }
        for (j, series) in panel.series.iter().enumerate() {
            let color = COLORS[j % COLORS.len()];
            let pts: Vec<String> = thin(&series.points)
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT + plot_w - 4.0,
                top + 12.0 + 12.0 * j as f64,
                escape(&series.label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_deterministically() {
        let panel = || Panel {
            title: "z(t) & <u>".into(),
            series: vec![Series {
                label: "z".into(),
                points: (0..5000).map(|k| (k as f64 * 1e-3, (k as f64 * 1e-3).sin())).collect(),
            }],
        };
        let a = render(&[panel(), panel()]);
        assert_eq!(a, render(&[panel(), panel()]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("z(t) &amp; &lt;u&gt;"));
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn flat_series_gets_a_range() {
        let p = Panel {
            title: "flat".into(),
            series: vec![Series {
                label: "x".into(),
                points: vec![(0.0, 0.0), (1.0, 0.0)],
            }],
        };
        assert_eq!(bounds(&p), ((0.0, 1.0), (-1.0, 1.0)));
        assert!(!render(&[p]).contains("NaN"));
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let pts: Vec<(f64, f64)> = (0..10_001).map(|k| (k as f64, 0.0)).collect();
        let t = thin(&pts);
        assert!(t.len() <= MAX_POINTS + 1);
        assert_eq!(t.first(), pts.first());
        assert_eq!(t.last(), pts.last());
    }
}
