//! Static SVG plots: ROC curves and sweep line charts with error bars.
//! Output is a pure function of the input (no timestamps or ids).

use std::fmt::Write;

use crate::stats::RocPoint;

const W: f64 = 480.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x_range: (f64, f64),
    y_range: (f64, f64),
    log_x: bool,
}

impl Frame {
    fn pw() -> f64 {
        W - LEFT - RIGHT
    }

    fn ph() -> f64 {
        H - TOP - BOTTOM
    }

    fn tx(&self, x: f64) -> f64 {
        let (a, b) = self.x_range;
        let t = if self.log_x { (x.ln() - a.ln()) / (b.ln() - a.ln()) } else { (x - a) / (b - a) };
        LEFT + t * Self::pw()
    }

    fn ty(&self, y: f64) -> f64 {
        let (a, b) = self.y_range;
        TOP + (1.0 - (y - a) / (b - a)) * Self::ph()
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, LEFT + Frame::pw() / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_ticks: &[(f64, String)], y_ticks: &[(f64, String)], x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, LEFT + Frame::pw(), TOP + Frame::ph(), TOP);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for (v, label) in x_ticks {
        let x = f.tx(*v);
        let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 18.0, escape(label));
    }
    for (v, label) in y_ticks {
        let y = f.ty(*v);
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, escape(label));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 14.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 12.0 + 18.0 * i as f64;
        let x = LEFT + Frame::pw() + 12.0;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/>"#, x + 18.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 24.0, y + 4.0, escape(name));
    }
}

fn unit_ticks() -> Vec<(f64, String)> {
    (0..=5).map(|i| (i as f64 / 5.0, format!("{:.1}", i as f64 / 5.0))).collect()
}

/// ROC curves on the unit square with the chance diagonal.
pub fn roc_svg(title: &str, curves: &[(&str, &[RocPoint])]) -> String {
    let f = Frame {
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        log_x: false,
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, &unit_ticks(), &unit_ticks(), "False positive rate (1 - specificity)", "True positive rate (sensitivity)");
    let _ = writeln!(
        out,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888888" stroke-dasharray="4 4"/>"##,
        f.tx(0.0),
        f.ty(0.0),
        f.tx(1.0),
        f.ty(1.0)
    );
    for (i, (_, pts)) in curves.iter().enumerate() {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", f.tx(p.fpr), f.ty(p.tpr))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            path.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut out, &curves.iter().map(|c| c.0).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// One line of a sweep chart: `(x, mean, sd)` points.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64, Option<f64>)>,
}

/// Mean AUC against the swept variable with +-1 sd error bars.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        (lo, hi) = if log_x { (lo / 2.0, hi * 2.0) } else { (lo - 0.5, hi + 0.5) };
    }
    let pad = if log_x { 1.0 } else { (hi - lo) * 0.05 };
    let x_range = if log_x { (lo / 1.25, hi * 1.25) } else { (lo - pad, hi + pad) };
    let f = Frame {
        x_range,
        y_range: (0.0, 1.0),
        log_x,
    };
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    let x_ticks: Vec<(f64, String)> = ticks.iter().map(|&x| (x, format!("{x}"))).collect();
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, &x_ticks, &unit_ticks(), x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", f.tx(x), f.ty(m))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for &(x, m, sd) in &s.points {
            let (px, py) = (f.tx(x), f.ty(m));
            if let Some(sd) = sd {
                let (a, b) = (f.ty((m - sd).max(0.0)), f.ty((m + sd).min(1.0)));
                let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{a:.2}" x2="{px:.2}" y2="{b:.2}" stroke="{c}"/>"#);
                for y in [a, b] {
                    let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{c}"/>"#, px - 4.0, px + 4.0);
                }
            }
            let _ = writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{c}"/>"#);
        }
    }
    legend(&mut out, &series.iter().map(|s| s.name).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Vec<RocPoint> {
        [(f64::INFINITY, 0.0, 0.0), (0.8, 0.0, 0.5), (0.4, 0.5, 1.0), (0.1, 1.0, 1.0)]
            .into_iter()
            .map(|(threshold, fpr, tpr)| RocPoint { threshold, fpr, tpr })
            .collect()
    }

    #[test]
    fn roc_plot_has_axes_curve_and_diagonal() {
        let p = pts();
        let svg = roc_svg("ROC <test>", &[("model", &p)]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("False positive rate") && svg.contains("True positive rate"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("&lt;test&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        // (0,0) maps to the lower-left plot corner.
        assert!(svg.contains(&format!("{:.2},{:.2}", LEFT, TOP + Frame::ph())));
        assert_eq!(svg, roc_svg("ROC <test>", &[("model", &p)]));
    }

    #[test]
    fn line_plot_draws_error_bars() {
        let series = [
            Series {
                name: "cl",
                points: vec![(0.1, 0.8, Some(0.05)), (1.0, 0.9, Some(0.02))],
            },
            Series {
                name: "random",
                points: vec![(0.1, 0.55, None), (1.0, 0.8, Some(0.03))],
            },
        ];
        let svg = line_plot_svg("AUC", "fraction", "AUC", &series, false);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
        // Ticks (2 x, 6 y), legend (2), and three error bars of a stem plus two caps.
        assert_eq!(svg.matches("<line").count(), 2 + 6 + 2 + 9);
        let log = line_plot_svg("AUC", "batch", "AUC", &[Series { name: "cl", points: vec![(32.0, 0.7, None)] }], true);
        assert!(log.contains(">32<"));
    }
}
