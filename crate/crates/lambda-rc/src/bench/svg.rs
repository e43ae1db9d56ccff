//! Minimal deterministic SVG line plots. No styling dependencies, fixed
//! palette, fixed float formatting, so identical inputs produce identical
//! bytes.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Render series as a line chart. Empty series are skipped; an entirely
/// empty plot still renders axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let points: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x_lo, mut x_hi) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut y_lo, mut y_hi) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if points.is_empty() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_lo == y_hi {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let y_pad = (y_hi - y_lo) * 0.05;
    y_lo -= y_pad;
    y_hi += y_pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        escape(title)
    );

    // Axes and ticks.
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h),
        fmt(MARGIN_L + plot_w),
        fmt(MARGIN_T + plot_h)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(MARGIN_L),
        fmt(MARGIN_T + plot_h)
    );
    for t in nice_ticks(x_lo, x_hi, 5) {
        let x = sx(t);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
            fmt(x),
            fmt(MARGIN_T + plot_h),
            fmt(x),
            fmt(MARGIN_T + plot_h + 5.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>",
            fmt(x),
            fmt(MARGIN_T + plot_h + 18.0),
            fmt(t)
        );
    }
    for t in nice_ticks(y_lo, y_hi, 5) {
        let y = sy(t);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#000000\"/>",
            fmt(MARGIN_L - 5.0),
            fmt(y),
            fmt(MARGIN_L),
            fmt(y)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>",
            fmt(MARGIN_L - 8.0),
            fmt(y + 4.0),
            fmt(t)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>",
            fmt(MARGIN_L),
            fmt(y),
            fmt(MARGIN_L + plot_w),
            fmt(y)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>",
        fmt(MARGIN_L + plot_w / 2.0),
        fmt(HEIGHT - 10.0),
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        fmt(MARGIN_T + plot_h / 2.0),
        fmt(MARGIN_T + plot_h / 2.0),
        escape(y_label)
    );

    // Series.
    for (idx, s) in series.iter().filter(|s| !s.points.is_empty()).enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>",
                fmt(sx(x)),
                fmt(sy(y))
            );
        }
        let ly = MARGIN_T + 14.0 + idx as f64 * 18.0;
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            fmt(WIDTH - MARGIN_R + 10.0),
            fmt(ly - 4.0),
            fmt(WIDTH - MARGIN_R + 30.0),
            fmt(ly - 4.0)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>",
            fmt(WIDTH - MARGIN_R + 36.0),
            fmt(ly),
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_deterministic_and_well_formed() {
        let series = vec![
            Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 1.5)] },
            Series { name: "b".into(), points: vec![(0.0, 0.5), (1.0, 0.7), (2.0, 2.5)] },
        ];
        let a = line_plot("title", "x", "y", &series);
        let b = line_plot("title", "x", "y", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("title"));
    }

    #[test]
    fn degenerate_inputs_still_render() {
        let flat = vec![Series { name: "flat".into(), points: vec![(1.0, 3.0), (2.0, 3.0)] }];
        let svg = line_plot("t", "x", "y", &flat);
        assert!(svg.contains("<polyline"));
        let single = vec![Series { name: "dot".into(), points: vec![(1.0, 3.0)] }];
        let svg = line_plot("t", "x", "y", &single);
        assert!(svg.contains("<circle"));
        let empty: Vec<Series> = vec![];
        let svg = line_plot("t", "x", "y", &empty);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = line_plot("a<b&c", "x", "y", &[]);
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
