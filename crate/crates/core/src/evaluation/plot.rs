//! Minimal SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

use super::keypoints::SweepPoint;
use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders `series` with shared linear axes. `y_range` fixes the vertical
/// extent; otherwise it spans the data.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    y_range: Option<(f64, f64)>,
) -> String {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if let Some((a, b)) = y_range {
        (y0, y1) = (a, b);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{} V{} H{}" stroke="black" fill="none"/>"#,
        PAD,
        H - PAD,
        W - PAD
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            H - PAD + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 4.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = se
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y.clamp(y0, y1))))
            .collect();
        if !d.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{c}" stroke-width="2" fill="none"/>"#,
                d.join(" ")
            );
        }
        let ly = PAD + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly:.1}" fill="{c}" text-anchor="end">{}</text>"#,
            W - PAD,
            escape(se.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

fn write(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Success rate against threshold `1..=curve.len()`.
pub fn write_success_curve(path: impl AsRef<Path>, curve: &[f64], label: &str) -> Result<()> {
    let points = curve
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64, v))
        .collect();
    let svg = line_chart(
        "Registration success",
        "threshold (px)",
        "fraction of pairs",
        &[Series { label, points }],
        Some((0.0, 1.0)),
    );
    write(path.as_ref(), &svg)
}

/// Mean and median keypoint distance against the fraction of matches kept.
pub fn write_keypoint_distance(path: impl AsRef<Path>, sweep: &[SweepPoint]) -> Result<()> {
    let mean = sweep.iter().map(|p| (p.fraction, p.mean_px)).collect();
    let median = sweep.iter().map(|p| (p.fraction, p.median_px)).collect();
    let svg = line_chart(
        "Keypoint distance",
        "fraction of matches",
        "distance (px)",
        &[
            Series {
                label: "mean",
                points: mean,
            },
            Series {
                label: "median",
                points: median,
            },
        ],
        None,
    );
    write(path.as_ref(), &svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.svg");
        write_success_curve(&p, &[0.0, 0.5, 1.0], "a<b").unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b") && s.contains("<polyline"));
        let empty = line_chart("t", "x", "y", &[], None);
        assert!(!empty.contains("polyline"));
    }
}
