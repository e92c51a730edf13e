//! Static SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const PAD: f64 = 40.0;

/// Polyline of `ys` against their index, with the y range printed on the axis.
pub fn line_chart(title: &str, ys: &[f64]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let (x0, x1, y0, y1) = (PAD, WIDTH - PAD / 2.0, HEIGHT - PAD, PAD);
    let _ = writeln!(svg, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    if !ys.is_empty() {
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let step = if ys.len() > 1 { (x1 - x0) / (ys.len() - 1) as f64 } else { 0.0 };
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{:.2},{:.2}", x0 + step * i as f64, y0 - (y - lo) / span * (y0 - y1)))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="steelblue" stroke-width="1.5" fill="none"/>"#, points.join(" "));
        for (label, y) in [(hi, y1), (lo, y0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="10" text-anchor="end">{label:.4}</text>"#,
                x0 - 4.0,
                y + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_point_per_value() {
        let svg = line_chart("a<b", &[0.0, 0.5, 0.25]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
        assert!(line_chart("empty", &[]).ends_with("</svg>\n"));
    }
}
