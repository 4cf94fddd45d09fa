use std::fmt::Write;

pub struct Point {
    pub x: f64,
    pub y: f64,
    pub positive: bool,
}

const SIZE: f64 = 640.0;
const PAD: f64 = 64.0;
const POSITIVE: &str = "#d62728";
const NEGATIVE: &str = "#1f77b4";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Padded range that always contains zero, where the hyperplanes sit.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - 0.05 * span, hi + 0.05 * span)
}

pub fn scatter_svg(points: &[Point], title: &str, x_label: &str, y_label: &str) -> String {
    let (x0, x1) = range(points.iter().map(|p| p.x));
    let (y0, y1) = range(points.iter().map(|p| p.y));
    let inner = SIZE - 2.0 * PAD;
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * inner;
    let py = |y: f64| SIZE - PAD - (y - y0) / (y1 - y0) * inner;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{inner}" height="{inner}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{PAD}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        px(0.0),
        px(0.0),
        SIZE - PAD
    );
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        py(0.0),
        SIZE - PAD,
        py(0.0)
    );
    for p in points {
        let fill = if p.positive { POSITIVE } else { NEGATIVE };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{fill}" fill-opacity="0.6"/>"#,
            px(p.x),
            py(p.y)
        );
    }
    for (x, anchor, v) in [(PAD, "start", x0), (SIZE - PAD, "end", x1)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{:.2}" text-anchor="{anchor}">{v:.2}</text>"#, SIZE - PAD + 16.0);
    }
    for (y, v) in [(SIZE - PAD, y0), (PAD + 10.0, y1)] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y}" text-anchor="end">{v:.2}</text>"#, PAD - 6.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 20.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="32" text-anchor="middle" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    for (i, (fill, label)) in [(POSITIVE, "label 1"), (NEGATIVE, "label 0")].iter().enumerate() {
        let y = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{y}" r="4" fill="{fill}"/>"#, SIZE - PAD - 60.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, SIZE - PAD - 50.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
