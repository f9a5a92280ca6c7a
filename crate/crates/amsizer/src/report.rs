//! Run artifacts: `report.json` (byte-reproducible given the seed; wall
//! times live in a separate `meta.json`), `history.csv` with one row per
//! evaluation, a per-seed aggregate table, and an SVG of the running-best
//! figure of merit versus sample count.

use crate::opt::{OptReport, RunStatus};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("history.csv malformed: {0}")]
    Malformed(String),
}

pub fn write_report_json(report: &OptReport, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub wall_time_seconds: f64,
    pub finished_at_unix: u64,
}

pub fn write_meta_json(report: &OptReport, path: &Path) -> Result<(), ReportError> {
    let meta = RunMeta {
        wall_time_seconds: report.wall_time,
        finished_at_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Column order: eval_index, iteration, provenance, one column per design
/// variable, one per metric, one normalized score per metric, fom, radius,
/// no_imp. Radius and no_imp are those recorded for the row's iteration
/// (initial samples carry the initial radius and zero).
pub fn write_history_csv(report: &OptReport, path: &Path) -> Result<(), ReportError> {
    let mut writer = csv::Writer::from_path(path)?;
    let var_names: Vec<String> = report
        .history
        .first()
        .map(|e| e.point.keys().cloned().collect())
        .unwrap_or_default();
    let metric_names: Vec<String> = report
        .history
        .first()
        .map(|e| e.scores.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();

    let mut header = vec![
        "eval_index".to_string(),
        "iteration".to_string(),
        "provenance".to_string(),
    ];
    header.extend(var_names.iter().cloned());
    header.extend(metric_names.iter().cloned());
    header.extend(metric_names.iter().map(|n| format!("r_{n}")));
    header.extend(["fom".to_string(), "radius".to_string(), "no_imp".to_string()]);
    writer.write_record(&header)?;

    let per_iteration: BTreeMap<u64, (f64, u32)> = report
        .trace
        .iter()
        .map(|t| (t.iteration, (t.radius_after, t.no_imp_after)))
        .collect();
    let initial_radius = report
        .trace
        .first()
        .map(|t| t.radius_before)
        .unwrap_or(0.0);

    for entry in &report.history {
        let provenance = serde_json::to_value(entry.provenance)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let mut row: Vec<String> = vec![
            entry.eval_index.to_string(),
            entry.iteration.to_string(),
            provenance,
        ];
        for name in &var_names {
            row.push(format!("{}", entry.point.get(name).copied().unwrap_or(f64::NAN)));
        }
        for name in &metric_names {
            let value = match entry.measurement.values.get(name) {
                Some(crate::score::MetricValue::Value(v)) => format!("{v}"),
                _ => "failed".to_string(),
            };
            row.push(value);
        }
        for (_, r) in &entry.scores {
            row.push(format!("{r}"));
        }
        row.push(format!("{}", entry.fom));
        let (radius, no_imp) = per_iteration
            .get(&entry.iteration)
            .copied()
            .unwrap_or((initial_radius, 0));
        row.push(format!("{radius}"));
        row.push(no_imp.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// A parsed history row with just what cross-checks need.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub eval_index: u64,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub fom: f64,
}

pub fn read_history_csv(path: &Path, metric_names: &[String]) -> Result<Vec<HistoryRow>, ReportError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let col = |name: &str| -> Result<usize, ReportError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::Malformed(format!("missing column `{name}`")))
    };
    let idx_eval = col("eval_index")?;
    let idx_fom = col("fom")?;
    let metric_cols: Vec<(String, usize)> = metric_names
        .iter()
        .map(|n| Ok((n.clone(), col(n)?)))
        .collect::<Result<_, ReportError>>()?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut metrics = BTreeMap::new();
        for (name, idx) in &metric_cols {
            let cell = record.get(*idx).unwrap_or("");
            metrics.insert(name.clone(), cell.parse::<f64>().ok());
        }
        rows.push(HistoryRow {
            eval_index: record
                .get(idx_eval)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ReportError::Malformed("bad eval_index".into()))?,
            metrics,
            fom: record
                .get(idx_fom)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ReportError::Malformed("bad fom".into()))?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Aggregation

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub seed: u64,
    pub status: RunStatus,
    pub evaluations: u64,
    pub samples_to_feasible: Option<u64>,
    pub best_fom: f64,
    pub advisor_calls: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateRow>,
    pub feasible_runs: usize,
    pub mean_samples_to_feasible: Option<f64>,
    pub median_samples_to_feasible: Option<f64>,
    pub mean_best_fom: f64,
    pub mean_advisor_calls: f64,
}

pub fn aggregate(reports: &[OptReport]) -> Aggregate {
    let rows: Vec<AggregateRow> = reports
        .iter()
        .map(|r| AggregateRow {
            seed: r.seed,
            status: r.status,
            evaluations: r.evaluations,
            samples_to_feasible: r.samples_to_feasible,
            best_fom: r.best.fom,
            advisor_calls: r.advisor_calls,
        })
        .collect();
    let mut feasible: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.samples_to_feasible)
        .map(|s| s as f64)
        .collect();
    feasible.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let median = |xs: &[f64]| {
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2.0
        }
    };
    Aggregate {
        feasible_runs: feasible.len(),
        mean_samples_to_feasible: (!feasible.is_empty()).then(|| mean(&feasible)),
        median_samples_to_feasible: (!feasible.is_empty()).then(|| median(&feasible)),
        mean_best_fom: mean(&rows.iter().map(|r| r.best_fom).collect::<Vec<_>>()),
        mean_advisor_calls: mean(&rows.iter().map(|r| r.advisor_calls as f64).collect::<Vec<_>>()),
        rows,
    }
}

pub fn format_table(label: &str, agg: &Aggregate) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>10} {:>18} {:>14} {:>14}\n",
        "run", "seed", "evals", "samples-to-feas", "best FoM", "advisor calls"
    ));
    for row in &agg.rows {
        out.push_str(&format!(
            "{:<12} {:>6} {:>10} {:>18} {:>14.6} {:>14}\n",
            label,
            row.seed,
            row.evaluations,
            row.samples_to_feasible
                .map(|s| s.to_string())
                .unwrap_or_else(|| "-".into()),
            row.best_fom,
            row.advisor_calls
        ));
    }
    out.push_str(&format!(
        "{} feasible {}/{} | mean samples-to-feasible {} | median {} | mean best FoM {:.6} | mean advisor calls {:.1}\n",
        label,
        agg.feasible_runs,
        agg.rows.len(),
        agg.mean_samples_to_feasible
            .map(|m| format!("{m:.1}"))
            .unwrap_or_else(|| "-".into()),
        agg.median_samples_to_feasible
            .map(|m| format!("{m:.1}"))
            .unwrap_or_else(|| "-".into()),
        agg.mean_best_fom,
        agg.mean_advisor_calls,
    ));
    out
}

// ---------------------------------------------------------------------------
// SVG plot

/// Running-best FoM versus evaluation count, one polyline per seed.
pub fn plot_svg(reports: &[OptReport]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const ML: f64 = 70.0;
    const MB: f64 = 50.0;
    const MT: f64 = 20.0;
    const MR: f64 = 20.0;

    let mut curves: Vec<(u64, Vec<(f64, f64)>)> = Vec::new();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut x_max: f64 = 1.0;
    for report in reports {
        let mut best = f64::NEG_INFINITY;
        let mut pts = Vec::new();
        for entry in &report.history {
            best = best.max(entry.fom);
            pts.push((entry.eval_index as f64, best));
            y_min = y_min.min(best);
            y_max = y_max.max(best);
            x_max = x_max.max(entry.eval_index as f64);
        }
        curves.push((report.seed, pts));
    }
    if !y_min.is_finite() {
        y_min = -1.0;
        y_max = 0.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }

    let sx = |x: f64| ML + (x / x_max) * (W - ML - MR);
    let sy = |y: f64| H - MB - ((y - y_min) / (y_max - y_min)) * (H - MB - MT);
    let palette = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
        "#bcbd22", "#17becf",
    ];

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">samples</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 {})\">best FoM</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));
    for (lo, label) in [(y_min, format!("{y_min:.3}")), (y_max, format!("{y_max:.3}"))] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{label}</text>\n",
            ML - 6.0,
            sy(lo) + 4.0
        ));
    }
    for (i, (seed, pts)) in curves.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = palette[i % palette.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", sx(*x), sy(*y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>seed {seed}</title></polyline>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">seed {seed}</text>\n",
            W - MR - 70.0,
            MT + 14.0 * (i as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
