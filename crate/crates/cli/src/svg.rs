//! Minimal SVG box plot of speediness quantiles.

use std::fmt::Write as _;

use transrank_core::eval::RateSummary;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const PAD: f64 = 48.0;

/// One box per rate: whiskers at the 5 and 95 % quantiles, box from 25 to
/// 75 %, a bar at the median. The dashed lines mark 0 and 1.
pub fn box_plot(summary: &[RateSummary]) -> String {
    let lo = summary
        .iter()
        .map(|s| s.quantiles[0])
        .fold(0.0f64, f64::min);
    let hi = summary
        .iter()
        .map(|s| s.quantiles[4])
        .fold(1.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |v: f64| HEIGHT - PAD - (v - lo) / span * (HEIGHT - 2.0 * PAD);
    let slot = (WIDTH - 2.0 * PAD) / summary.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    for (v, label) in [(0.0, "0"), (1.0, "1")] {
        let _ = writeln!(
            s,
            r##"<line x1="{PAD}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/><text x="{}" y="{:.2}">{label}</text>"##,
            WIDTH - PAD,
            PAD - 16.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    for (i, r) in summary.iter().enumerate() {
        let cx = PAD + slot * (i as f64 + 0.5);
        let half = slot * 0.25;
        let [q05, q25, q50, q75, q95] = r.quantiles.map(y);
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.2}" x2="{cx:.2}" y1="{q95:.2}" y2="{q05:.2}" stroke="#333"/>"##
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{q75:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#333"/>"##,
            cx - half,
            2.0 * half,
            (q25 - q75).max(0.0)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" x2="{:.2}" y1="{q50:.2}" y2="{q50:.2}" stroke="#d62728" stroke-width="2"/>"##,
            cx - half,
            cx + half
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}x</text>"#,
            HEIGHT - PAD + 18.0,
            r.rate
        );
    }
    s.push_str("</svg>\n");
    s
}
