//! Static SVG line plots of the series CSVs.

use std::path::Path;

use memflow::experiment::RunSummary;
use memflow::io::Series;
use plotters::prelude::*;

struct Plot<'a> {
    series: &'a str,
    x: &'a str,
    /// Empty means every other column.
    y: &'a [&'a str],
    log_y: bool,
}

const PLOTS: &[Plot<'static>] = &[
    Plot { series: "moments", x: "t", y: &["moment", "sup_moment"], log_y: false },
    Plot { series: "moment_curves", x: "t", y: &[], log_y: true },
    Plot { series: "mean", x: "t", y: &["mean"], log_y: false },
    Plot { series: "picard_trace", x: "iteration", y: &["distance"], log_y: true },
    Plot { series: "fixed_point_mean", x: "t", y: &["mean", "oracle"], log_y: false },
    Plot { series: "coupling", x: "t", y: &["gap_p_weighted", "gap_p_plain"], log_y: true },
    Plot { series: "log_harnack", x: "t", y: &["defect"], log_y: false },
    Plot { series: "exp_moment", x: "t", y: &["estimate"], log_y: false },
];

/// Write one SVG per known series; returns notices for skipped ones.
pub fn emit(dir: &Path, summary: &RunSummary) -> anyhow::Result<Vec<String>> {
    let mut notices = Vec::new();
    for p in PLOTS {
        let Some(file) = summary.series.get(p.series) else {
            continue;
        };
        let s = Series::read_csv(&dir.join(file))?;
        let x = s.column(p.x).unwrap_or_default();
        let names: Vec<&str> = if p.y.is_empty() {
            s.columns.iter().map(String::as_str).filter(|c| *c != p.x).collect()
        } else {
            p.y.to_vec()
        };
        let lines: Vec<(String, Vec<(f64, f64)>)> = names
            .iter()
            .filter_map(|n| {
                let ys = s.column(n)?;
                let pts: Vec<(f64, f64)> = x
                    .iter()
                    .zip(ys)
                    .map(|(a, b)| (*a, b))
                    .filter(|(a, b)| a.is_finite() && b.is_finite() && (!p.log_y || *b > 0.0))
                    .collect();
                (!pts.is_empty()).then(|| (n.to_string(), pts))
            })
            .collect();
        if lines.is_empty() {
            notices.push(format!("notice: series `{}` has no plottable points; plot skipped", p.series));
            continue;
        }
        let out = dir.join(format!("{}.svg", p.series));
        draw(&out, p, &lines).map_err(|e| anyhow::anyhow!("plot {}: {e}", out.display()))?;
    }
    Ok(notices)
}

fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn draw(path: &Path, p: &Plot<'_>, lines: &[(String, Vec<(f64, f64)>)]) -> Result<(), Box<dyn std::error::Error>> {
    let (x0, x1) = span(lines.iter().flat_map(|(_, v)| v.iter().map(|q| q.0)));
    let (y0, y1) = span(lines.iter().flat_map(|(_, v)| v.iter().map(|q| q.1)));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut b = ChartBuilder::on(&root);
    b.caption(p.series, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70);
    let palette = |i: usize| Palette99::pick(i).to_rgba();
    if p.log_y {
        let (lo, hi) = if y0 > 0.0 { (y0, y1) } else { (y1 * 1e-6, y1) };
        let mut chart = b.build_cartesian_2d(x0..x1, (lo..hi).log_scale())?;
        chart.configure_mesh().x_desc(p.x).draw()?;
        for (i, (name, pts)) in lines.iter().enumerate() {
            let c = palette(i);
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), c))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c));
        }
        chart.configure_series_labels().border_style(BLACK).draw()?;
    } else {
        let mut chart = b.build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(p.x).draw()?;
        for (i, (name, pts)) in lines.iter().enumerate() {
            let c = palette(i);
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), c))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c));
        }
        chart.configure_series_labels().border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use memflow::experiment::{run, RunConfig};

    #[test]
    fn empty_series_is_skipped_with_notice() {
        let dir = tempfile::tempdir().unwrap();
        let cfg: RunConfig = serde_json::from_str(
            r#"{"experiment": "simulate", "model": {"id": "zero"}, "grid": {"h": 0.5, "T_hist": 0.5, "T": 1.0}, "M": 1}"#,
        )
        .unwrap();
        let mut summary = run(&cfg).unwrap().summary;
        Series::new(&["iteration", "distance", "ratio"])
            .write_csv(&dir.path().join("picard_trace.csv"))
            .unwrap();
        summary.series.clear();
        summary.series.insert("picard_trace".into(), "picard_trace.csv".into());
        let notices = emit(dir.path(), &summary).unwrap();
        assert_eq!(notices.len(), 1);
        assert!(!dir.path().join("picard_trace.svg").exists());
    }

    #[test]
    fn log_plot_of_a_decaying_series() {
        let dir = tempfile::tempdir().unwrap();
        let cfg: RunConfig = serde_json::from_str(
            r#"{"experiment": "simulate", "model": {"id": "zero"}, "grid": {"h": 0.5, "T_hist": 0.5, "T": 1.0}, "M": 1}"#,
        )
        .unwrap();
        let mut summary = run(&cfg).unwrap().summary;
        let mut s = Series::new(&["t", "gap_p_weighted", "gap_p_plain"]);
        for k in 0..20 {
            let t = k as f64 * 0.1;
            s.push(vec![t, (-t).exp(), (-2.0 * t).exp()]);
        }
        s.write_csv(&dir.path().join("coupling.csv")).unwrap();
        summary.series.clear();
        summary.series.insert("coupling".into(), "coupling.csv".into());
        assert!(emit(dir.path(), &summary).unwrap().is_empty());
        assert!(dir.path().join("coupling.svg").exists());
    }
}
