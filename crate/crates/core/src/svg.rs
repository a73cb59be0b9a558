//! Minimal deterministic SVG renderings of the exported tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;

use crate::rng;
use crate::shap::BeeswarmRow;

const W: f64 = 640.0;
const ROW_H: f64 = 28.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 20.0;

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue for low activations, red for high.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (30.0 + t * 200.0).round() as u8;
    let b = (230.0 - t * 200.0).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// One row per unit in the rows' order of first appearance; x is the SHAP
/// value, vertical jitter is seeded, color is the activation percentile
/// within the unit.
pub fn beeswarm(rows: &[BeeswarmRow], title: &str, seed: u64) -> String {
    let mut units: Vec<usize> = Vec::new();
    let mut by_unit: BTreeMap<usize, Vec<&BeeswarmRow>> = BTreeMap::new();
    for r in rows {
        if !by_unit.contains_key(&r.unit) {
            units.push(r.unit);
        }
        by_unit.entry(r.unit).or_default().push(r);
    }
    let lim = rows.iter().map(|r| r.shap.abs()).fold(0.0, f64::max).max(1e-12);
    let h = 50.0 + ROW_H * units.len() as f64 + 30.0;
    let x_of = |v: f64| MARGIN_L + (v + lim) / (2.0 * lim) * (W - MARGIN_L - MARGIN_R);
    let mut out = String::new();
    header(&mut out, W, h);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r##"<line x1="{0:.2}" y1="35" x2="{0:.2}" y2="{1:.2}" stroke="#999"/>"##, x_of(0.0), h - 30.0);
    let mut jitter = rng::derived(seed, "beeswarm", 0);
    for (i, u) in units.iter().enumerate() {
        let y0 = 50.0 + ROW_H * i as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">unit {u}</text>"#, MARGIN_L - 8.0, y0 + 4.0);
        let pts = &by_unit[u];
        let mut acts: Vec<f64> = pts.iter().map(|r| r.activation).collect();
        acts.sort_by(f64::total_cmp);
        for r in pts {
            let rank = acts.partition_point(|&a| a < r.activation) as f64;
            let pct = if acts.len() > 1 { rank / (acts.len() - 1) as f64 } else { 0.5 };
            let dy: f64 = jitter.random_range(-0.35..0.35) * ROW_H;
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.7"/>"#,
                x_of(r.shap),
                y0 + dy,
                ramp(pct)
            );
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="middle">SHAP value (margin)</text>"#, W / 2.0, h - 8.0);
    out.push_str("</svg>\n");
    out
}

/// Line plot of named series over shared x values.
pub fn lines(series: &[(String, Vec<(f64, f64)>)], title: &str, x_label: &str, y_label: &str) -> String {
    const H: f64 = 400.0;
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (top, bottom) = (40.0, H - 50.0);
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (W - MARGIN_L - MARGIN_R - 120.0);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);
    let mut out = String::new();
    header(&mut out, W, H);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r##"<line x1="{MARGIN_L}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="#333"/>"##, px(x1));
    let _ = writeln!(out, r##"<line x1="{MARGIN_L}" y1="{top}" x2="{MARGIN_L}" y2="{bottom}" stroke="#333"/>"##);
    for (v, anchor) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, MARGIN_L - 6.0, anchor + 4.0);
    }
    for (v, a) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="{a}">{v}</text>"#, px(v), bottom + 16.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (MARGIN_L + px(x1)) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, W - 125.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<BeeswarmRow> {
        (0..6)
            .map(|i| BeeswarmRow {
                concept: "c".into(),
                unit: [3, 1][i % 2],
                example: format!("e{i}"),
                shap: i as f64 - 2.5,
                activation: (i * 7 % 5) as f64,
            })
            .collect()
    }

    #[test]
    fn beeswarm_is_deterministic_and_complete() {
        let a = beeswarm(&rows(), "c <top>", 1);
        assert_eq!(a, beeswarm(&rows(), "c <top>", 1));
        assert_ne!(a, beeswarm(&rows(), "c <top>", 2));
        assert_eq!(a.matches("<circle").count(), 6);
        assert!(a.find("unit 3").unwrap() < a.find("unit 1").unwrap());
        assert!(a.contains("&lt;top&gt;"));
    }

    #[test]
    fn lines_handle_flat_and_empty_series() {
        let s = lines(&[("a".into(), vec![(0.0, 1.0), (1.0, 1.0)]), ("b".into(), vec![])], "t", "x", "y");
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(!s.contains("NaN"));
        assert!(!lines(&[], "t", "x", "y").contains("NaN"));
    }
}
