//! Self-contained SVG plots.

use std::fmt::Write;

use magclt_core::experiments::{LogFit, VarianceEstimate};
use magclt_core::stats;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: &[f64], ys: &[f64]) -> Frame {
        let span = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(lo.abs() * 0.05) };
            (lo - pad, hi + pad)
        };
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn open(title: &str, xlabel: &str, ylabel: &str, frame: Option<&Frame>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    if let Some(f) = frame {
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0);
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
        let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="start">{:.4}</text>"#, H - PAD + 14.0, f.x0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, W - PAD, H - PAD + 14.0, f.x1);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4e}</text>"#, PAD - 2.0, H - PAD, f.y0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4e}</text>"#, PAD - 2.0, PAD + 4.0, f.y1);
    }
    s
}

fn placeholder(title: &str, reason: &str) -> String {
    let mut s = open(title, "", "", None);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" fill="firebrick">{reason}</text>"#,
        W / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn dot(s: &mut String, x: f64, y: f64) {
    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="steelblue"/>"#);
}

fn line(s: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, colour: &str) {
    let _ = writeln!(
        s,
        r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{colour}"/>"#
    );
}

/// Sample quantiles of the studentized values against standard normal quantiles.
pub fn qq(values: &[f64]) -> String {
    let title = "QQ plot of normalized fluctuations";
    let m = stats::mean(values);
    let sd = stats::variance(values).sqrt();
    if values.len() < 2 || !(sd > 0.0) {
        return placeholder(title, "degenerate ensemble: zero variance, no QQ plot");
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let normal = statrs_quantiles(z.len());
    let frame = Frame::fit(&normal, &z);
    let mut s = open(title, "standard normal quantile", "studentized sample quantile", Some(&frame));
    let lo = frame.x0.max(frame.y0);
    let hi = frame.x1.min(frame.y1);
    line(&mut s, frame.px(lo), frame.py(lo), frame.px(hi), frame.py(hi), "gray");
    for (q, v) in normal.iter().zip(&z) {
        dot(&mut s, frame.px(*q), frame.py(*v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="36" text-anchor="middle">n = {n}</text>"#, W / 2.0);
    s.push_str("</svg>\n");
    s
}

fn statrs_quantiles(n: usize) -> Vec<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let normal = Normal::standard();
    (0..n)
        .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect()
}

/// `σ̂²(L)` with two-SE bars.
pub fn scaling(estimates: &[VarianceEstimate]) -> String {
    let title = "normalized variance against side length";
    let pts: Vec<(f64, f64, f64)> = estimates
        .iter()
        .filter_map(|e| e.side.map(|l| (l as f64, e.estimate, e.se)))
        .collect();
    if pts.is_empty() {
        return placeholder(title, "no estimates");
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = pts
        .iter()
        .flat_map(|p| [p.1 - 2.0 * p.2, p.1 + 2.0 * p.2])
        .collect();
    let frame = Frame::fit(&xs, &ys);
    let mut s = open(title, "log2 L", "Var(T) / L^d", Some(&frame));
    for (x, (_, y, se)) in xs.iter().zip(&pts) {
        line(&mut s, frame.px(*x), frame.py(y - 2.0 * se), frame.px(*x), frame.py(y + 2.0 * se), "black");
        dot(&mut s, frame.px(*x), frame.py(*y));
    }
    s.push_str("</svg>\n");
    s
}

/// `ln gap` against depth with the fitted line.
pub fn decay(series: &[(&str, Vec<(f64, f64)>, Option<LogFit>)]) -> String {
    let title = "interior trace gap against depth";
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .filter(|p| p.1 > 0.0)
        .map(|(x, y)| (x, y.ln()))
        .collect();
    if all.is_empty() {
        return placeholder(title, "no positive gaps");
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = all.iter().copied().unzip();
    let frame = Frame::fit(&xs, &ys);
    let mut s = open(title, "depth", "ln gap", Some(&frame));
    let colours = ["steelblue", "darkorange", "seagreen"];
    for (k, (name, pts, fit)) in series.iter().enumerate() {
        let c = colours[k % colours.len()];
        for (x, y) in pts.iter().filter(|p| p.1 > 0.0) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                frame.px(*x),
                frame.py(y.ln())
            );
        }
        if let Some(f) = fit {
            let (a, b) = (frame.x0, frame.x1);
            line(
                &mut s,
                frame.px(a),
                frame.py(f.intercept + f.slope * a),
                frame.px(b),
                frame.py(f.intercept + f.slope * b),
                c,
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#,
            PAD + 8.0,
            PAD + 16.0 * (k + 1) as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_qq_is_placeholder() {
        let svg = qq(&[1.0; 10]);
        assert!(svg.contains("degenerate ensemble"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn qq_is_deterministic() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(qq(&v), qq(&v));
        assert_eq!(qq(&v).matches("<circle").count(), 50);
    }
}
