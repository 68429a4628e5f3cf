//! Minimal dependency-free SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PLAIN_COLOR: &str = "#4477aa";
const SELECTED_COLOR: &str = "#ee6677";

/// Linear map from data coordinates to the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                let pad = lo.abs().max(1.0) * 1e-3;
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn header(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, frame: &Frame, x_label: &str, y_label: &str, tick: impl Fn(f64) -> String) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            frame.px(xv),
            y0 + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            frame.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, items: &[(&str, &str)]) {
    for (k, (label, color)) in items.iter().enumerate() {
        let y = MARGIN + 16.0 * k as f64;
        let x = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            x + 16.0,
            y,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

/// Overlaid density histograms of the plain and selected `a_11` samples.
pub fn histogram(plain: &[f64], selected: &[f64], bins: usize) -> String {
    let x = range(plain.iter().chain(selected).copied());
    let frame_x = Frame::new(x, (0.0, 1.0)).x;
    let width = (frame_x.1 - frame_x.0) / bins as f64;
    let density = |xs: &[f64]| -> Vec<f64> {
        let mut counts = vec![0.0; bins];
        for &v in xs {
            let b = (((v - frame_x.0) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        let norm = xs.len().max(1) as f64 * width;
        counts.into_iter().map(|c| c / norm).collect()
    };
    let (dp, ds) = (density(plain), density(selected));
    let ymax = dp.iter().chain(&ds).fold(0.0_f64, |a, &b| a.max(b));
    let frame = Frame::new(frame_x, (0.0, ymax * 1.05));
    let mut svg = String::new();
    header(&mut svg, "a_11: plain vs selected");
    axes(&mut svg, &frame, "a_11", "density", fmt_tick);
    for (hist, color) in [(&dp, PLAIN_COLOR), (&ds, SELECTED_COLOR)] {
        for (b, h) in hist.iter().enumerate() {
            let x0 = frame.px(frame_x.0 + b as f64 * width);
            let x1 = frame.px(frame_x.0 + (b + 1) as f64 * width);
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45"/>"#,
                frame.py(*h),
                x1 - x0,
                frame.py(0.0) - frame.py(*h)
            );
        }
    }
    legend(
        &mut svg,
        &[
            (&format!("plain (n={})", plain.len()), PLAIN_COLOR),
            (&format!("selected (n={})", selected.len()), SELECTED_COLOR),
        ],
    );
    svg.push_str("</svg>\n");
    svg
}

/// Scatter of `(F_avg, a_11)` with the acceptance band shaded.
pub fn scatter(plain: &[(f64, f64)], selected: &[(f64, f64)], band: Option<(f64, f64)>) -> String {
    let all = || plain.iter().chain(selected);
    let frame = Frame::new(range(all().map(|p| p.0)), range(all().map(|p| p.1)));
    let mut svg = String::new();
    header(&mut svg, "F_avg vs a_11");
    if let Some((lo, hi)) = band {
        let x0 = frame.px(lo.max(frame.x.0));
        let x1 = frame.px(hi.min(frame.x.1));
        if x1 > x0 {
            let _ = writeln!(
                svg,
                r##"<rect x="{x0:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="#cccccc" fill-opacity="0.5"/>"##,
                x1 - x0,
                HEIGHT - 2.0 * MARGIN
            );
        }
    }
    axes(&mut svg, &frame, "F_avg", "a_11", fmt_tick);
    for (points, color) in [(plain, PLAIN_COLOR), (selected, SELECTED_COLOR)] {
        for &(x, y) in points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#,
                frame.px(x),
                frame.py(y)
            );
        }
    }
    legend(&mut svg, &[("plain", PLAIN_COLOR), ("selected", SELECTED_COLOR)]);
    svg.push_str("</svg>\n");
    svg
}

/// Log-log plot of variance against the number of cells with the fitted
/// slope line.
pub fn variance_scaling(points: &[(f64, f64)], slope: Option<f64>, label: &str) -> String {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(l, v)| *l > 0.0 && *v > 0.0)
        .map(|(l, v)| (l.log10(), v.log10()))
        .collect();
    let x = range(logs.iter().map(|p| p.0));
    let y = range(logs.iter().map(|p| p.1));
    let pad = |(lo, hi): (f64, f64)| (lo - 0.1, hi + 0.1);
    let frame = Frame::new(pad(x), pad(y));
    let mut svg = String::new();
    header(&mut svg, &format!("Var({label}) vs L"));
    axes(&mut svg, &frame, "L (log10)", "variance (log10)", |v| {
        format!("{:.2e}", 10f64.powf(v))
    });
    if let (Some(s), false) = (slope, logs.is_empty()) {
        let n = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
        let line = |xv: f64| my + s * (xv - mx);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{SELECTED_COLOR}" stroke-dasharray="5,4"/>"#,
            frame.px(x.0),
            frame.py(line(x.0)),
            frame.px(x.1),
            frame.py(line(x.1))
        );
        legend(&mut svg, &[(&format!("slope {s:.3}"), SELECTED_COLOR)]);
    }
    for (lx, ly) in &logs {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{PLAIN_COLOR}"/>"#,
            frame.px(*lx),
            frame.py(*ly)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_svg_documents() {
        let h = histogram(&[1.0, 1.1, 1.2], &[1.05, 1.1], 10);
        let s = scatter(&[(0.5, 1.0), (0.7, 1.2)], &[(0.6, 1.1)], Some((0.55, 0.65)));
        let v = variance_scaling(&[(4.0, 1e-2), (8.0, 2.5e-3), (16.0, 6e-4)], Some(-2.0), "a_11");
        for svg in [h, s, v] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN"));
        }
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan() {
        let h = histogram(&[2.0; 4], &[2.0; 4], 5);
        assert!(!h.contains("NaN") && !h.contains("inf"));
    }
}
