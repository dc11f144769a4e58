//! Static grouped-bar charts as SVG text.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

pub struct Bar {
    pub value: Option<f64>,
    /// Optional whisker, e.g. the interquartile range.
    pub whisker: Option<(f64, f64)>,
}

/// `values[s][g]` is the bar of series `s` in group `g`.
pub fn grouped_bars(title: &str, y_label: &str, groups: &[String], series: &[String], values: &[Vec<Bar>]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 130.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for bar in values.iter().flatten() {
        for v in bar.value.into_iter().chain(bar.whisker.into_iter().flat_map(|(a, b)| [a, b])) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (if lo < 0.0 { lo - pad } else { lo }, hi + pad);
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let yy = y(v);
        writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            yy + 4.0,
            tick(v)
        )
        .unwrap();
    }
    let base = y(0.0f64.clamp(lo, hi));
    let gw = pw / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    for (g, label) in groups.iter().enumerate() {
        let gx = left + g as f64 * gw + gw * 0.1;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            left + (g as f64 + 0.5) * gw,
            top + ph + 20.0,
            escape(label)
        )
        .unwrap();
        for (k, row) in values.iter().enumerate() {
            let Some(bar) = row.get(g) else { continue };
            let x = gx + k as f64 * bw;
            if let Some(v) = bar.value {
                let (y0, y1) = (y(v).min(base), y(v).max(base));
                writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    bw * 0.9,
                    (y1 - y0).max(0.5),
                    PALETTE[k % PALETTE.len()]
                )
                .unwrap();
            }
            if let Some((a, b)) = bar.whisker {
                let cx = x + bw * 0.45;
                writeln!(
                    s,
                    r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                    y(a),
                    y(b)
                )
                .unwrap();
            }
        }
    }
    writeln!(
        s,
        r#"<line x1="{left}" x2="{}" y1="{base:.1}" y2="{base:.1}" stroke="black"/>"#,
        left + pw
    )
    .unwrap();
    for (k, name) in series.iter().enumerate() {
        let ly = top + 10.0 + 20.0 * k as f64;
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            ly - 10.0,
            PALETTE[k % PALETTE.len()],
            left + pw + 30.0,
            ly,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
