//! Top-down XY plot of an estimated and a reference trajectory.

use std::fmt::Write as _;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;

/// Color ramp from green (no error) to red (`max` or more).
fn ramp(value: f64, max: f64) -> String {
    let t = if max > 0.0 { (value / max).clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 215.0 * t).round() as u8;
    let g = (180.0 * (1.0 - t) + 40.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}40")
}

/// `est` must already be aligned to `gt`; pairs are matched by index.
pub fn trajectory_plot(gt: &[[f64; 2]], est: &[[f64; 2]], ate_cm: f64) -> String {
    let all = gt.iter().chain(est);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |p: &[f64; 2]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let polyline = |pts: &[[f64; 2]], style: &str| {
        let coords: Vec<String> = pts.iter().map(|p| {
            let (x, y) = px(p);
            format!("{x:.2},{y:.2}")
        }).collect();
        format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
    };
    out.push_str(&polyline(gt, r##"stroke="#888" stroke-width="2""##));
    let residuals: Vec<f64> =
        gt.iter().zip(est).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).collect();
    let max = residuals.iter().copied().fold(0.0, f64::max);
    for (i, pair) in est.windows(2).enumerate() {
        let (x0, y0) = px(&pair[0]);
        let (x1, y1) = px(&pair[1]);
        let err = residuals.get(i + 1).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{}" stroke-width="2"/>"#,
            ramp(err, max)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="monospace" font-size="14">gray: reference, colored: estimate (red = {:.2} cm), ATE {:.3} cm</text>"#,
        max * 100.0,
        ate_cm
    );
    let bar = 100.0 * scale.recip().max(0.0);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{:.0}" font-family="monospace" font-size="12">1 m = {:.1} px ({:.3} m per 100 px)</text>"#,
        SIZE - 12.0,
        scale,
        bar
    );
    out.push_str("</svg>\n");
    out
}
