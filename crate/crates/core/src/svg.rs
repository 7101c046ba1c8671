//! Static line plots as hand-written SVG.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#7f7f7f"];

/// One named line; `None` values break the polyline.
pub struct Line<'a> {
    pub label: &'a str,
    pub values: &'a [Option<f64>],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plots the lines against their sample index with a shared y range.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, lines: &[Line<'_>]) -> String {
    let finite = lines.iter().flat_map(|l| l.values.iter().flatten()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let n = lines.iter().map(|l| l.values.len()).max().unwrap_or(0).max(2);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |i: usize| MARGIN + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| MARGIN + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, y0, x1, y1) = (MARGIN, MARGIN, MARGIN + pw, MARGIN + ph);
    let _ = writeln!(s, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, MARGIN - 6.0, y(v) + 4.0);
    }
    for k in 0..=4 {
        let i = (n - 1) * k / 4;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#, x(i), y1 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 8.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (li, line) in lines.iter().enumerate() {
        let color = COLORS[li % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, v) in line.values.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {
                    let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, x(i), y(*v));
                    pen_down = true;
                }
                _ => pen_down = false,
            }
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let ly = MARGIN + 14.0 * li as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, x1 - 120.0, escape(line.label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_has_one_path_per_line_and_breaks_on_gaps() {
        let a = [Some(1.0), Some(2.0), None, Some(3.0)];
        let b = [None, Some(1.5), Some(2.5), Some(2.0)];
        let svg = line_plot("t <1>", "hour", "kW", &[Line { label: "actual", values: &a }, Line { label: "predicted", values: &b }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        let strokes = svg.matches("stroke-width=\"1.5\"").count();
        assert_eq!(strokes, 2);
        let first = svg.lines().find(|l| l.contains("#1f77b4") && l.contains("<path")).unwrap();
        assert_eq!(first.matches('M').count(), 2);
    }

    #[test]
    fn flat_and_empty_inputs_do_not_panic() {
        line_plot("", "", "", &[Line { label: "c", values: &[Some(1.0); 3] }]);
        line_plot("", "", "", &[]);
    }
}
