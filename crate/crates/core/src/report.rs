//! Run history as CSV and as a three-panel SVG chart.

use crate::trainer::RunHistory;
use std::fmt::Write as _;
use std::io::{self, Write};

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6e}"))
}

/// `iter,wall_s,loss,rel_l2,loss_<term>…,w_<term>…[,bound_<term>…]`.
/// Missing values are empty cells.
pub fn write_csv(history: &RunHistory, mut w: impl Write) -> io::Result<()> {
    let labels = &history.term_labels;
    let bounds = history.entries.iter().any(|e| e.error_bounds.is_some());
    let mut head = vec!["iter".to_string(), "wall_s".into(), "loss".into(), "rel_l2".into()];
    head.extend(labels.iter().map(|l| format!("loss_{l}")));
    head.extend(labels.iter().map(|l| format!("w_{l}")));
    if bounds {
        head.extend(labels.iter().map(|l| format!("bound_{l}")));
    }
    writeln!(w, "{}", head.join(","))?;
    for e in &history.entries {
        let mut row = vec![e.iter.to_string(), format!("{:.6}", e.wall_s), format!("{:.6e}", e.loss), opt(e.rel_l2)];
        for i in 0..labels.len() {
            row.push(opt(e.term_losses.get(i).copied()));
        }
        for i in 0..labels.len() {
            row.push(opt(e.weights.get(i).copied()));
        }
        if bounds {
            for i in 0..labels.len() {
                row.push(opt(e.error_bounds.as_ref().and_then(|b| b.get(i).copied())));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const PANEL_W: f64 = 340.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 50.0;

type Series = Vec<(f64, f64)>;

fn log_panel(svg: &mut String, ox: f64, title: &str, xlabel: &str, series: &[(&str, Series)]) {
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|(_, s)| s.iter().copied()).filter(|&(x, y)| x.is_finite() && y > 0.0 && y.is_finite()).collect();
    let w = PANEL_W - MARGIN - 10.0;
    let h = PANEL_H - MARGIN - 30.0;
    let (x0, y0) = (ox + MARGIN, 30.0);
    let _ = write!(svg, r#"<text x="{:.1}" y="18" font-size="13" text-anchor="middle">{title}</text>"#, x0 + w / 2.0);
    let _ = write!(svg, r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#888"/>"##);
    let _ = write!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xlabel}</text>"#, x0 + w / 2.0, y0 + h + 32.0);
    if pts.is_empty() {
        return;
    }
    let (xmin, xmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (lmin, lmax) =
        pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1.log10()), a.1.max(p.1.log10())));
    let (lmin, lmax) = (lmin.floor(), lmax.ceil().max(lmin.floor() + 1.0));
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let sx = |x: f64| x0 + (x - xmin) / xspan * w;
    let sy = |y: f64| y0 + h - (y.log10() - lmin) / (lmax - lmin) * h;
    let step = ((lmax - lmin) / 6.0).ceil().max(1.0);
    let mut k = lmin;
    while k <= lmax {
        let y = sy(10f64.powf(k));
        let _ = write!(svg, r##"<line x1="{x0:.1}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#eee"/>"##, x0 + w);
        let _ = write!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">1e{k}</text>"#, x0 - 4.0, y + 3.0);
        k += step;
    }
    for (v, anchor) in [(xmin, "start"), (xmax, "end")] {
        let _ = write!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="{anchor}">{}</text>"#, sx(v), y0 + h + 14.0, fmt_tick(v));
    }
    for (i, (_, s)) in series.iter().enumerate() {
        let d: Vec<String> = s
            .iter()
            .filter(|&&(x, y)| x.is_finite() && y > 0.0 && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        if d.len() > 1 {
            let _ = write!(svg, r#"<polyline fill="none" stroke-width="1.2" stroke="{}" points="{}"/>"#, COLORS[i % COLORS.len()], d.join(" "));
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() { format!("{v:.0}") } else { format!("{v:.2}") }
}

/// Loss against iteration, loss against wall time, and error against
/// iteration, one line per run.
pub fn render_svg(runs: &[(&str, &RunHistory)]) -> String {
    let pick = |f: &dyn Fn(&crate::trainer::HistoryEntry) -> Option<(f64, f64)>| -> Vec<(&str, Series)> {
        runs.iter().map(|(n, h)| (*n, h.entries.iter().filter_map(f).collect())).collect()
    };
    let by_iter = pick(&|e| Some((e.iter as f64, e.loss)));
    let by_time = pick(&|e| Some((e.wall_s, e.loss)));
    let error = pick(&|e| e.rel_l2.map(|r| (e.iter as f64, r)));
    let legend_h = 16.0 * runs.len() as f64 + 10.0;
    let (w, h) = (3.0 * PANEL_W, PANEL_H + legend_h);
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    log_panel(&mut svg, 0.0, "loss", "iteration", &by_iter);
    log_panel(&mut svg, PANEL_W, "loss", "wall time (s)", &by_time);
    log_panel(&mut svg, 2.0 * PANEL_W, "relative L2 error", "iteration", &error);
    for (i, (name, _)) in runs.iter().enumerate() {
        let y = PANEL_H + 16.0 * i as f64 + 4.0;
        let c = COLORS[i % COLORS.len()];
        let _ = write!(
            svg,
            r#"<line x1="{m}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            MARGIN + 20.0,
            MARGIN + 26.0,
            y + 4.0,
            escape(name),
            m = MARGIN
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::HistoryEntry;

    fn history() -> RunHistory {
        RunHistory {
            term_labels: vec!["pde".into(), "bc".into()],
            entries: (0..3)
                .map(|i| HistoryEntry {
                    iter: i,
                    wall_s: i as f64 * 0.5,
                    loss: 1.0 / (i + 1) as f64,
                    rel_l2: (i != 1).then_some(0.1),
                    term_losses: vec![0.5, 0.25],
                    weights: vec![1.0, 2.0],
                    error_bounds: None,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_columns_line_up() {
        let mut buf = Vec::new();
        write_csv(&history(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,wall_s,loss,rel_l2,loss_pde,loss_bc,w_pde,w_bc");
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
        assert_eq!(lines[2].split(',').nth(3), Some(""));
    }

    #[test]
    fn svg_has_three_panels() {
        let h = history();
        let svg = render_svg(&[("a", &h), ("b<c", &h)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains("b&lt;c"));
    }
}
