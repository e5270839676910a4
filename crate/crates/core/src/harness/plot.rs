//! SVG line charts of `F(z_k) − F*` against depth or iteration count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::experiment::{quantile, ResultTable};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One series per model: `(x, median over seeds of the median gap)`, keeping only
/// points that can be drawn on a log axis.
pub fn series(table: &ResultTable) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in &table.rows {
        grouped
            .entry(r.model.clone())
            .or_default()
            .entry(r.depth_or_iter)
            .or_default()
            .push(r.f_gap_median);
    }
    grouped
        .into_iter()
        .map(|(model, points)| {
            let pts = points
                .into_iter()
                .map(|(x, ys)| (x as f64, quantile(&ys, 0.5)))
                .filter(|(_, y)| y.is_finite() && *y > 0.0)
                .collect();
            (model, pts)
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart of one experiment. Returns `(file name, SVG document)` pairs;
/// the output depends only on the table.
pub fn emit_plots(table: &ResultTable) -> Vec<(String, String)> {
    let all = series(table);
    let mut drawn = Vec::new();
    for (model, pts) in &all {
        if pts.is_empty() {
            log::warn!(
                "{}: series `{model}` has no positive finite points; skipped",
                table.experiment_id
            );
        } else {
            drawn.push((model.as_str(), pts.as_slice()));
        }
    }
    let name = format!("{}.svg", table.experiment_id);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&table.experiment_id)
    );
    if drawn.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
            WIDTH / 2.0,
            HEIGHT / 2.0
        );
        svg.push_str("</svg>\n");
        return vec![(name, svg)];
    }

    let points = drawn.iter().flat_map(|(_, p)| p.iter());
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y.log10());
        y_max = y_max.max(y.log10());
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    let (y_lo, y_hi) = (y_min.floor(), y_max.ceil().max(y_min.floor() + 1.0));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |ly: f64| MARGIN_TOP + (y_hi - ly) / (y_hi - y_lo) * plot_h;

    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let mut decade = y_lo as i32;
    while decade as f64 <= y_hi {
        let y = py(decade as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
        decade += 1;
    }
    let x_ticks: std::collections::BTreeSet<i64> = drawn
        .iter()
        .flat_map(|(_, p)| p.iter().map(|(x, _)| *x as i64))
        .collect();
    for x in x_ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            px(x as f64),
            MARGIN_TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layers / iterations</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">F(z) - F(z*)</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    for (i, (model, pts)) in drawn.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(y.log10())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for (x, y) in pts.iter() {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(*x),
                py(y.log10())
            );
        }
        let ly = MARGIN_TOP + 14.0 + 20.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(model)
        );
    }
    svg.push_str("</svg>\n");
    vec![(name, svg)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::ResultRow;

    fn row(model: &str, k: usize, seed: u64, gap: f64) -> ResultRow {
        ResultRow {
            model: model.into(),
            depth_or_iter: k,
            seed,
            f_gap_median: gap,
            f_gap_q25: gap,
            f_gap_q75: gap,
        }
    }

    fn table() -> ResultTable {
        ResultTable {
            experiment_id: "demo".into(),
            rows: vec![
                row("ista", 0, 0, 10.0),
                row("ista", 1, 0, 1.0),
                row("ista", 1, 1, 3.0),
                row("lista", 1, 0, 0.01),
                row("empty", 1, 0, 0.0),
            ],
        }
    }

    #[test]
    fn series_aggregate_and_skip() {
        let s = series(&table());
        assert_eq!(s["ista"], vec![(0.0, 10.0), (1.0, 2.0)]);
        assert!(s["empty"].is_empty());
    }

    #[test]
    fn identical_tables_give_identical_files() {
        let a = emit_plots(&table());
        let b = emit_plots(&table());
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].0, "demo.svg");
        let svg = &a[0].1;
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        // Axis covers 1e-2 .. 1e1.
        assert!(svg.contains(">1e-2<") && svg.contains(">1e1<"));
    }

    #[test]
    fn points_lie_inside_the_plot_area() {
        let svg = &emit_plots(&table())[0].1;
        for circle in svg.split("<circle").skip(1) {
            let num = |key: &str| -> f64 {
                let start = circle.find(key).unwrap() + key.len();
                circle[start..].split('"').next().unwrap().parse().unwrap()
            };
            let (cx, cy) = (num("cx=\""), num("cy=\""));
            assert!((MARGIN_LEFT..=WIDTH - MARGIN_RIGHT).contains(&cx));
            assert!((MARGIN_TOP..=HEIGHT - MARGIN_BOTTOM).contains(&cy));
        }
    }
}
