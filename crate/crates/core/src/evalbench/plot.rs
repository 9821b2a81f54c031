use std::fmt::Write as _;

use super::metrics::DetCurve;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const FLOOR: f64 = 1e-3;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn axis(v: f64, len: f64) -> f64 {
    let l = v.max(FLOOR).log10();
    (l - FLOOR.log10()) / -FLOOR.log10() * len
}

/// Static DET plot (BPCER on x, APCER on y, both log scaled from 1e-3 to 1).
pub fn det_svg(curves: &[(String, DetCurve)], title: &str) -> String {
    let pw = WIDTH - 2.0 * MARGIN;
    let ph = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + axis(v, pw);
    let y = |v: f64| HEIGHT - MARGIN - axis(v, ph);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for k in 0..=3 {
        let v = 10f64.powi(-k);
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#ddd"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{v}</text>"##,
            x(v),
            MARGIN,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}" stroke="#ddd"/><text x="{3:.2}" y="{0:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v}</text>"##,
            y(v),
            MARGIN,
            WIDTH - MARGIN,
            MARGIN - 6.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">BPCER</text>"#,
        WIDTH / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">APCER</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.bpcer), y(p.apcer)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 100.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
