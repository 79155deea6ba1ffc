//! CSV reports and small self-contained SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use super::sweep::{ProportionSummary, SweepResult};
use super::{EpochReport, Rebuild, StepLog};
use crate::metrics::MetricReport;
use crate::Result;

pub const TRAIN_LOG_HEADER: [&str; 7] = ["epoch", "step", "l_main", "l_ilrb", "l_plrb", "l_cst", "l_total"];
pub const METRICS_HEADER: [&str; 8] = ["proportion", "mAP", "OP", "OR", "OF1", "CP", "CR", "CF1"];

pub fn write_train_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAIN_LOG_HEADER)?;
    for l in log {
        let r = &l.losses;
        w.write_record([
            l.epoch.to_string(),
            l.step.to_string(),
            r.main.to_string(),
            r.ilrb.to_string(),
            r.plrb.to_string(),
            r.cst.to_string(),
            r.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch means and the variance of the total loss.
pub fn write_epochs(path: &Path, epochs: &[EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lr",
        "steps",
        "l_main",
        "l_ilrb",
        "l_plrb",
        "l_cst",
        "l_total",
        "total_variance",
        "rebuilt",
        "alpha_mean",
        "beta_mean",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in epochs {
        let m = &e.mean;
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.steps.to_string(),
            m.main.to_string(),
            m.ilrb.to_string(),
            m.plrb.to_string(),
            m.cst.to_string(),
            m.total.to_string(),
            e.total_variance.to_string(),
            e.prototypes_rebuilt.to_string(),
            opt(e.alpha_mean),
            opt(e.beta_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rebuilds(path: &Path, rebuilds: &[Rebuild]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "step", "valid_categories"])?;
    for r in rebuilds {
        w.write_record([r.epoch.to_string(), r.step.to_string(), r.valid_categories.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn metric_row(proportion: f64, values: [f64; 7]) -> Vec<String> {
    std::iter::once(proportion)
        .chain(values)
        .map(|v| v.to_string())
        .collect()
}

fn report_values(m: &MetricReport) -> [f64; 7] {
    [m.map, m.op, m.or, m.of1, m.cp, m.cr, m.cf1]
}

fn summary_values(s: &ProportionSummary) -> [f64; 7] {
    [s.map, s.op, s.or, s.of1, s.cp, s.cr, s.cf1]
}

/// One row per evaluated proportion.
pub fn write_metrics(path: &Path, rows: &[(f64, &MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for (p, m) in rows {
        w.write_record(metric_row(*p, report_values(m)))?;
    }
    w.flush()?;
    Ok(())
}

/// `proportion,category,ap`; categories without a positive have an empty AP.
pub fn write_ap_per_category(path: &Path, rows: &[(f64, &[Option<f64>])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["proportion", "category", "ap"])?;
    for (p, aps) in rows {
        for (c, ap) in aps.iter().enumerate() {
            w.write_record([
                p.to_string(),
                c.to_string(),
                ap.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Seed-averaged rows for every proportion.
pub fn write_sweep_metrics(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for s in &sweep.summaries {
        w.write_record(metric_row(s.proportion, summary_values(s)))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per `(proportion, seed)` run followed by an `average` row that
/// holds the mean over proportions of the seed-averaged metrics.
pub fn write_sweep_summary(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["proportion", "seed", "achieved"];
    header.extend_from_slice(&METRICS_HEADER[1..]);
    header.extend(["config_hash", "wall_seconds"]);
    w.write_record(&header)?;
    for r in &sweep.runs {
        let mut row = vec![
            r.proportion.to_string(),
            r.seed.to_string(),
            r.achieved_proportion.to_string(),
        ];
        row.extend(report_values(&r.metrics).iter().map(f64::to_string));
        row.push(r.config_hash.clone());
        row.push(format!("{:.3}", r.wall_time.as_secs_f64()));
        w.write_record(&row)?;
    }
    let n = sweep.summaries.len() as f64;
    let mut avg = [0.0; 7];
    for s in &sweep.summaries {
        for (a, v) in avg.iter_mut().zip(summary_values(s)) {
            *a += v / n;
        }
    }
    avg[0] = sweep.average_map;
    let mut row = vec!["average".to_string(), "all".to_string(), String::new()];
    row.extend(avg.iter().map(f64::to_string));
    row.extend([String::new(), String::new()]);
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A line chart with one polyline per series.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, margin) = (640.0, 400.0, 56.0);
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        out,
        r#"<line x1="{margin}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{margin}" y1="{margin}" x2="{margin}" y2="{b}" stroke="black"/>"#,
        b = h - margin,
        r = w - margin
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#,
            sx(xv),
            h - margin + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            margin - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = margin + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{name}</text>"#,
            w - margin
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Per-epoch mean total loss of each run.
pub fn loss_curve_svg(runs: &[(String, &[EpochReport])]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(name, epochs)| {
            (
                name.clone(),
                epochs.iter().map(|e| (e.epoch as f64, e.mean.total)).collect(),
            )
        })
        .collect();
    line_plot_svg("Training loss", "epoch", "mean total loss", &series)
}

pub fn map_vs_proportion_svg(sweeps: &[(String, &SweepResult)]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = sweeps
        .iter()
        .map(|(name, s)| {
            (
                name.clone(),
                s.summaries.iter().map(|p| (p.proportion, p.map)).collect(),
            )
        })
        .collect();
    line_plot_svg("mAP vs known label proportion", "known proportion", "mAP", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_contains_every_series() {
        let svg = line_plot_svg(
            "t",
            "x",
            "y",
            &[
                ("a".into(), vec![(0.0, 1.0), (1.0, 2.0)]),
                ("b".into(), vec![(0.5, 0.5)]),
            ],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(line_plot_svg("t", "x", "y", &[]).contains("</svg>"));
    }
}
