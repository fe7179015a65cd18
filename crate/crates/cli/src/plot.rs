//! Minimal SVG line chart of `‖x(t)‖` and each multiplier component.

use std::fmt::Write;

use lure::integrate::Trajectory;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series {
    label: String,
    values: Vec<f64>,
}

pub fn trajectory_svg(traj: &Trajectory, title: &str) -> String {
    let mut series = vec![Series {
        label: "|x|".into(),
        values: traj.states.iter().map(|x| x.norm()).collect(),
    }];
    let m = traj.lambdas.first().map_or(0, |l| l.len());
    for j in 0..m {
        series.push(Series {
            label: format!("lambda_{}", j + 1),
            values: traj.lambdas.iter().map(|l| l[j]).collect(),
        });
    }
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let t1 = traj.times.last().copied().unwrap_or(1.0);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let span_t = if t1 > t0 { t1 - t0 } else { 1.0 };
    let px = |t: f64| MARGIN + (t - t0) / span_t * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        svg,
        r#"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>"#
    );
    for (v, anchor) in [(lo, y0), (hi, y1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{anchor}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x0 - 4.0
        );
    }
    for (t, anchor) in [(t0, x0), (t1, x1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">t={t:.3}</text>"#,
            y0 + 16.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = traj
            .times
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(&t, &v)| format!("{:.2},{:.2}", px(t), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            x1 - 90.0,
            y1 + 16.0 * (k as f64 + 1.0),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
