//! Hand-written SVG line charts.
//!
//! A chart is a pure function of the numbers passed in — same series, same
//! bytes — so a figure can always be regenerated from the CSV artifacts
//! alone. Only what the shipped curves need is implemented: linear axes,
//! automatic ticks (integer ticks on the x axis, since x is always a block
//! count), a legend, and an optional highlighted point per series for
//! marking optima.

use std::fmt::Write as _;

/// One polyline. `points` must be sorted by x; a gap in x is drawn as a
/// straight segment (vacuous bound values should simply be omitted).
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// x coordinate of a point to circle (e.g. the optimal block count).
    pub marker: Option<f64>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 58.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick positions covering [lo, hi] at a step of 1, 2, or 5 times a power
/// of ten, aiming for about `target` ticks.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= target as f64 + 0.5)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    // tolerate one half-step of float drift at the far end
    while t <= hi + step * 1e-9 {
        // snap near-zero ticks so they label as "0", not "-0"
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e7 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn of(series: &[Series]) -> Self {
        let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in xs {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
        }
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in ys {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !x_min.is_finite() {
            (x_min, x_max) = (0.0, 1.0);
        }
        if !y_min.is_finite() {
            (y_min, y_max) = (0.0, 1.0);
        }
        // widen degenerate ranges, then pad y so curves don't hug the frame
        if x_min == x_max {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_min == y_max {
            let w = y_min.abs().max(1.0) * 0.1;
            y_min -= w;
            y_max += w;
        }
        let pad = (y_max - y_min) * 0.06;
        Self { x_min, x_max, y_min: y_min - pad, y_max: y_max + pad }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN_T + (1.0 - (y - self.y_min) / (self.y_max - self.y_min)) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Render a line chart. Series colors follow a fixed palette in order, so
/// the same series list always yields the same bytes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let f = Frame::of(series);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"Helvetica, Arial, sans-serif\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"26\" text-anchor=\"middle\" font-size=\"17\" fill=\"#1a1a1a\">{}</text>",
        WIDTH / 2.0,
        esc(title)
    );

    // x ticks: every integer when x is an integer range of reasonable size
    let int_x = series
        .iter()
        .flat_map(|s| &s.points)
        .all(|p| p.0.fract() == 0.0)
        && (f.x_max - f.x_min) <= 16.0;
    let x_ticks = if int_x {
        let lo = f.x_min.ceil() as i64;
        let hi = f.x_max.floor() as i64;
        (lo..=hi).map(|v| v as f64).collect::<Vec<_>>()
    } else {
        nice_ticks(f.x_min, f.x_max, 8)
    };
    let y_ticks = nice_ticks(f.y_min, f.y_max, 6);

    for &t in &y_ticks {
        let y = f.py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
            WIDTH - MARGIN_R
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"12\" fill=\"#444444\">{}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    for &t in &x_ticks {
        let x = f.px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#444444\" stroke-width=\"1\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" fill=\"#444444\">{}</text>",
            HEIGHT - MARGIN_B + 20.0,
            fmt_tick(t)
        );
    }

    // frame
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\" fill=\"#1a1a1a\">{}</text>",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 14.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"14\" fill=\"#1a1a1a\" \
         transform=\"rotate(-90 20 {:.2})\">{}</text>",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        esc(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>",
                f.px(x),
                f.py(y)
            );
        } else if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                pts.join(" ")
            );
        }
        if let Some(mx) = s.marker {
            if let Some(&(x, y)) = s.points.iter().find(|p| p.0 == mx) {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{color}\" stroke=\"#1a1a1a\" stroke-width=\"1.5\"/>",
                    f.px(x),
                    f.py(y)
                );
            }
        }
    }

    // legend, top-right inside the frame
    if !series.is_empty() {
        let lx = WIDTH - MARGIN_R - 230.0;
        let ly = MARGIN_T + 12.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"222\" height=\"{:.2}\" fill=\"#ffffff\" fill-opacity=\"0.85\" stroke=\"#bbbbbb\"/>",
            lx,
            ly,
            series.len() as f64 * 20.0 + 10.0
        );
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let y = ly + 20.0 * (i as f64 + 1.0);
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>",
                lx + 8.0,
                y - 4.0,
                lx + 34.0,
                y - 4.0
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#1a1a1a\">{}</text>",
                lx + 40.0,
                y,
                esc(&s.label)
            );
        }
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Series> {
        vec![
            Series {
                label: "M=0".into(),
                points: (1..=9).map(|k| (k as f64, 2.0 - 0.1 * k as f64)).collect(),
                marker: Some(5.0),
            },
            Series {
                label: "M=4, σ²=0.01".into(),
                points: (1..=9).map(|k| (k as f64, 2.5 - 0.08 * k as f64)).collect(),
                marker: None,
            },
        ]
    }

    #[test]
    fn chart_is_a_pure_function_of_its_inputs() {
        let a = line_chart("loss vs K", "blocks K", "final train loss", &sample());
        let b = line_chart("loss vs K", "blocks K", "final train loss", &sample());
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 2);
        // marker circle for the first series only
        assert_eq!(a.matches("r=\"5\"").count(), 1);
        // integer x ticks 1..9
        for k in 1..=9 {
            assert!(a.contains(&format!(">{k}</text>")), "missing x tick {k}");
        }
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn labels_are_escaped() {
        let s = vec![Series {
            label: "a<b & c>d".into(),
            points: vec![(1.0, 1.0), (2.0, 2.0)],
            marker: None,
        }];
        let svg = line_chart("t<&>t", "x", "y", &s);
        assert!(svg.contains("a&lt;b &amp; c&gt;d"));
        assert!(svg.contains("t&lt;&amp;&gt;t"));
        assert!(!svg.contains("a<b"));
    }

    #[test]
    fn degenerate_inputs_do_not_produce_invalid_svg() {
        // single point, flat series, empty series list
        let one = vec![Series { label: "p".into(), points: vec![(3.0, 1.5)], marker: None }];
        let svg = line_chart("one", "x", "y", &one);
        assert!(svg.contains("<circle"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));

        let flat = vec![Series {
            label: "flat".into(),
            points: vec![(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)],
            marker: Some(2.0),
        }];
        let svg = line_chart("flat", "x", "y", &flat);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));

        let svg = line_chart("empty", "x", "y", &[]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn tick_generation_is_sane() {
        let t = nice_ticks(0.0, 10.0, 6);
        assert_eq!(t, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = nice_ticks(1.3, 2.2, 6);
        assert!(t.len() >= 3 && t.len() <= 8, "{t:?}");
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(t.first().unwrap() >= &1.3 && t.last().unwrap() <= &2.2000001);
        // negative-through-zero ranges label zero as 0
        let t = nice_ticks(-1.0, 1.0, 5);
        assert!(t.contains(&0.0));
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(2.0), "2");
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(0.3), "0.3");
    }
}
