//! Accuracy-versus-severity curves as a standalone SVG.

use std::fmt::Write as _;

use dyntta::train::EvalReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One polyline per (report, corruption kind); dashed for every report after
/// the first. Severity 0 is the clean accuracy.
pub fn severity_curves(reports: &[&EvalReport]) -> String {
    let max_sev = reports
        .iter()
        .flat_map(|r| r.cells.iter().map(|c| c.severity))
        .max()
        .unwrap_or(5)
        .max(1) as f64;
    let x = |s: f64| LEFT + s / max_sev * (W - LEFT - RIGHT);
    let y = |a: f64| TOP + (1.0 - a.clamp(0.0, 1.0)) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"##,
            W - RIGHT,
            y(a),
            y(a),
            LEFT - 6.0,
            y(a) + 4.0,
            100.0 * a
        );
    }
    for s in 0..=max_sev as u8 {
        let label = if s == 0 { "clean".to_string() } else { s.to_string() };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            x(s as f64),
            H - BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">severity</text><text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">accuracy (%)</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        (TOP + H - BOTTOM) / 2.0
    );

    let mut line = 0;
    for (ri, r) in reports.iter().enumerate() {
        let mut kinds = Vec::new();
        for c in &r.cells {
            if !kinds.contains(&c.kind) {
                kinds.push(c.kind);
            }
        }
        let dash = if ri == 0 { "" } else { r#" stroke-dasharray="5 3""# };
        for k in kinds {
            let color = COLORS[line % COLORS.len()];
            let mut pts = vec![(0.0, r.clean)];
            let mut cells: Vec<_> = r.cells.iter().filter(|c| c.kind == k).collect();
            cells.sort_by_key(|c| c.severity);
            pts.extend(cells.iter().map(|c| (c.severity as f64, c.accuracy)));
            let path: Vec<String> = pts.iter().map(|(s, a)| format!("{:.1},{:.1}", x(*s), y(*a))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                path.join(" ")
            );
            let ly = TOP + 14.0 * line as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="1.5"{dash}/><text x="{:.1}" y="{:.1}">{} / {k}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0,
                W - RIGHT + 34.0,
                ly + 4.0,
                esc(&r.name)
            );
            line += 1;
        }
    }
    svg.push_str("</svg>\n");
    svg
}
