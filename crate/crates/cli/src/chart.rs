//! Static SVG line chart of TV against NFE, both axes logarithmic.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::records::ExperimentRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
/// TV values below this are drawn at the floor.
const TV_FLOOR: f64 = 1e-6;

/// Mean TV per (method, nfe), methods in first-seen order.
fn series(records: &[ExperimentRecord]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.method) {
            order.push(r.method.clone());
        }
        let e = acc.entry((r.method.clone(), r.nfe)).or_insert((0.0, 0));
        e.0 += r.tv;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|m| {
            let pts = acc
                .iter()
                .filter(|((name, _), _)| *name == m)
                .map(|((_, nfe), (sum, n))| (*nfe as f64, (sum / *n as f64).max(TV_FLOOR)))
                .collect();
            (m, pts)
        })
        .collect()
}

pub fn render_svg(records: &[ExperimentRecord]) -> String {
    let lines = series(records);
    let all: Vec<(f64, f64)> = lines.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x_lo, mut x_hi) =
        all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (1.0, 2.0);
    }
    if x_hi <= x_lo {
        x_hi = x_lo * 2.0;
    }
    let y_min = all.iter().map(|p| p.1).fold(1.0, f64::min);
    let (lx_lo, lx_hi) = (x_lo.log2(), x_hi.log2());
    let ly_lo = y_min.log10().floor().min(-1.0);
    let ly_hi = 0.0;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x.log2() - lx_lo) / (lx_hi - lx_lo) * plot_w;
    let py = |y: f64| MARGIN_Y + (ly_hi - y.log10()) / (ly_hi - ly_lo) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0) = (MARGIN_LEFT, HEIGHT - MARGIN_Y);
    let _ = writeln!(s, r#"<path d="M{x0} {MARGIN_Y} V{y0} H{}" fill="none" stroke="black"/>"#, MARGIN_LEFT + plot_w);
    let mut decade = ly_lo as i32;
    while decade <= ly_hi as i32 {
        let y = py(10f64.powi(decade));
        let _ =
            writeln!(s, r##"<line x1="{x0}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, MARGIN_LEFT + plot_w);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{decade}</text>"#, x0 - 6.0, y + 4.0);
        decade += 1;
    }
    let mut ticks: Vec<f64> = all.iter().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let x = px(t);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{t}</text>"#, y0 + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" text-anchor="middle">NFE</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">TV distance</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0
    );
    for (k, (name, pts)) in lines.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = MARGIN_Y + 18.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, nfe: usize, tv: f64) -> ExperimentRecord {
        ExperimentRecord { method: method.into(), seed: 0, nfe, tv, hellinger: None, wallclock_ns: 0 }
    }

    #[test]
    fn one_polyline_per_method() {
        let rows = vec![rec("euler", 16, 0.2), rec("euler", 32, 0.1), rec("gadd", 16, 0.01), rec("gadd", 32, 0.0)];
        let svg = render_svg(&rows);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">gadd<"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn empty_input_still_renders() {
        assert!(render_svg(&[]).contains("</svg>"));
    }
}
