//! Minimal SVG line charts rendered from a [`Table`]: the first column is
//! the abscissa and every other numeric column becomes one labeled series.

use std::fmt::Write as _;

use crate::table::{format_sig, Table};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round step from the 1-2-5 sequence giving about `count` intervals.
fn nice_step(span: f64, count: f64) -> f64 {
    let raw = span / count;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5.0);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

pub fn render(table: &Table) -> String {
    let x = table.column(&table.columns[0]).unwrap_or_default();
    let series: Vec<(String, Vec<f64>)> = table.columns[1..]
        .iter()
        .filter_map(|name| table.column(name).map(|v| (name.clone(), v)))
        .filter(|(_, v)| v.iter().any(|y| y.is_finite()))
        .collect();
    let (x_lo, x_hi) = range(x.iter().copied()).unwrap_or((0.0, 1.0));
    let (y_lo, y_hi) = range(series.iter().flat_map(|(_, v)| v.iter().copied())).unwrap_or((0.0, 1.0));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |v: f64| TOP + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&table.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x_lo, x_hi) {
        let px = sx(t);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 20.0,
            format_sig(t)
        );
    }
    for t in ticks(y_lo, y_hi) {
        let py = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT + plot_w,
            LEFT - 8.0,
            py + 4.0,
            format_sig(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(&table.columns[0])
    );

    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut segments: Vec<Vec<String>> = vec![Vec::new()];
        for (&xv, &yv) in x.iter().zip(ys) {
            if xv.is_finite() && yv.is_finite() {
                segments.last_mut().expect("nonempty").push(format!("{:.2},{:.2}", sx(xv), sy(yv)));
            } else if !segments.last().expect("nonempty").is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                seg.join(" ")
            );
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series_and_gaps_split() {
        let mut t = Table::new("fig0", "a < b", vec!["t".into(), "x".into(), "y".into()]);
        for i in 0..5usize {
            let y = if i == 2 { f64::NAN } else { i as f64 };
            t.push(vec![i.into(), (i as f64 * 0.5).into(), y.into()]);
        }
        let svg = render(&t);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn tick_steps() {
        assert_eq!(nice_step(100.0, 5.0), 20.0);
        assert_eq!(ticks(0.0, 1.0).len(), 6);
        assert!(ticks(0.13, 0.19).iter().all(|&v| (0.13..=0.19).contains(&v)));
    }
}
