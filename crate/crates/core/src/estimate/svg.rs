//! Standalone SVG boxplot of blend weights, one box per family.

use std::fmt::Write as _;

use super::WeightStats;

const BOX_W: f64 = 28.0;
const GAP: f64 = 14.0;
const LEFT: f64 = 48.0;
const TOP: f64 = 20.0;
const PLOT_H: f64 = 240.0;
const BOTTOM: f64 = 90.0;

/// Boxplot of blend weights on a fixed [0, 1] axis. Filter groups are drawn
/// from their per-image group sums. Every box is a `rect` of class `box`.
pub fn boxplot_svg(stats: &WeightStats, title: &str) -> String {
    let fams = stats.families();
    let width = LEFT + fams.len() as f64 * (BOX_W + GAP) + GAP;
    let height = TOP + PLOT_H + BOTTOM;
    let y = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"##,
            width - GAP,
            y(t),
            y(t),
            LEFT - 4.0,
            y(t) + 3.0
        );
    }
    for (i, (family, w)) in fams.iter().enumerate() {
        let x0 = LEFT + GAP + i as f64 * (BOX_W + GAP);
        let xc = x0 + BOX_W / 2.0;
        let _ = writeln!(s, r#"<g data-family="{}">"#, family.name());
        let _ = writeln!(
            s,
            r#"<line x1="{xc:.1}" x2="{xc:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
            y(w.max),
            y(w.min)
        );
        let _ = writeln!(
            s,
            r##"<rect class="box" x="{x0:.1}" y="{:.1}" width="{BOX_W}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            y(w.q3),
            (y(w.q1) - y(w.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            x0 + BOX_W,
            y(w.median),
            y(w.median)
        );
        let ly = TOP + PLOT_H + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{xc:.1}" y="{ly:.1}" transform="rotate(60 {xc:.1} {ly:.1})">{}</text>"#,
            family.name()
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
