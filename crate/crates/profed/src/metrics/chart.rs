//! Minimal SVG line charts for validation accuracy curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// One labeled accuracy curve: (round, accuracy) points.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartSeries {
    pub label: String,
    pub points: Vec<(u64, f64)>,
}

/// Renders accuracy curves to an SVG file.
///
/// The y axis is always the full `[0, 1]` accuracy range so charts from
/// different experiments are visually comparable.
pub fn render_chart(title: &str, series: &[ChartSeries], path: &Path) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::NoRecords);
    }
    let max_round = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(r, _)| r))
        .max()
        .unwrap_or(1)
        .max(1);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |round: u64| MARGIN_LEFT + plot_w * round as f64 / max_round as f64;
    let y_of = |acc: f64| MARGIN_TOP + plot_h * (1.0 - acc.clamp(0.0, 1.0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        xml_escape(title)
    );

    // Horizontal gridlines and y labels every 0.1.
    for i in 0..=10 {
        let acc = i as f64 / 10.0;
        let y = y_of(acc);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd" stroke-width="1"/>"##,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{acc:.1}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    // X axis labels at up to ten evenly spaced rounds.
    let x_step = (max_round as f64 / 10.0).ceil().max(1.0) as u64;
    let mut r = 0;
    while r <= max_round {
        let x = x_of(r);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{r}</text>"#,
            MARGIN_TOP + plot_h + 20.0
        );
        r += x_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">round</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 18 {:.2})">validation accuracy</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{:.2}" stroke="black" stroke-width="1"/>"#,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1"/>"#,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(r, a)| format!("{:.2},{:.2}", x_of(r), y_of(a)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 16.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly + 4.0,
            lx + 18.0,
            ly + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 24.0,
            ly + 8.0,
            xml_escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</svg>");

    std::fs::write(path, svg).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> Vec<ChartSeries> {
        vec![
            ChartSeries {
                label: "seed 0".to_string(),
                points: vec![(1, 0.2), (2, 0.8), (3, 1.0)],
            },
            ChartSeries {
                label: "seed 1".to_string(),
                points: vec![(1, 0.0), (2, 0.5), (3, 0.9)],
            },
        ]
    }

    #[test]
    fn chart_contains_one_polyline_per_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.svg");
        render_chart("accuracy", &series(), &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("<svg"));
        assert!(body.trim_end().ends_with("</svg>"));
        assert_eq!(body.matches("<polyline").count(), 2);
        assert!(body.contains("seed 0"));
        assert!(body.contains("seed 1"));
    }

    #[test]
    fn accuracy_axis_spans_zero_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.svg");
        render_chart("t", &series(), &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        // Accuracy 1.0 maps to the top margin, 0.0 to the bottom of the plot.
        assert!(body.contains(&format!("{:.2},{:.2}", 800.0 - 150.0, 40.0)));
        assert!(body.contains(&format!("{:.2},{:.2}", 60.0 + (800.0 - 210.0) / 3.0, 500.0 - 50.0)));
    }

    #[test]
    fn out_of_range_points_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chart.svg");
        let s = vec![ChartSeries {
            label: "x".to_string(),
            points: vec![(1, -0.5), (2, 1.5)],
        }];
        render_chart("t", &s, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let polyline = body
            .lines()
            .find(|l| l.starts_with("<polyline"))
            .unwrap()
            .to_string();
        // -0.5 clamps to accuracy 0 (y = 450), 1.5 clamps to accuracy 1 (y = 40).
        assert!(polyline.contains("450.00"));
        assert!(polyline.contains("40.00"));
    }

    #[test]
    fn empty_series_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_chart("t", &[], &dir.path().join("c.svg")).is_err());
    }
}
