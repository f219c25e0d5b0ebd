//! Time-to-target tables over a directory of round CSVs. Each run file is
//! named `<label>_seed<seed>.csv`; the report lists the per-seed
//! time-to-target for every label plus a `median` row, as CSV and as an
//! aligned text table. Runs that never reach the target show `N/A` and are
//! treated as infinitely slow when ranking for the median.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const REPORT_CSV_HEADER: &str = "label,seed,time_to_target_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportMetric {
    TrainLoss,
    TestMetric,
}

#[derive(Debug)]
pub struct RunSeries {
    pub label: String,
    pub seed: Option<u64>,
    /// (wallclock_s, train_loss, test_metric) per round, round 0 first.
    pub rows: Vec<(f64, f64, f64)>,
}

/// Parses one round CSV, recovering the label and seed from the file name.
pub fn parse_run_csv(path: &Path) -> Result<RunSeries> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let (label, seed) = match stem.rsplit_once("_seed") {
        Some((l, s)) if !l.is_empty() && s.parse::<u64>().is_ok() => {
            (l.to_string(), Some(s.parse().unwrap()))
        }
        _ => (stem.to_string(), None),
    };

    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != crate::runner::ROUND_CSV_HEADER {
        bail!(
            "{} does not look like a run CSV (header '{header}')",
            path.display()
        );
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            bail!("{} row {}: expected 6 fields, got {}", path.display(), i + 2, fields.len());
        }
        let wallclock: f64 = fields[1]
            .parse()
            .with_context(|| format!("{} row {}: bad wallclock", path.display(), i + 2))?;
        let train: f64 = fields[4]
            .parse()
            .with_context(|| format!("{} row {}: bad train loss", path.display(), i + 2))?;
        let test: f64 = fields[5]
            .parse()
            .with_context(|| format!("{} row {}: bad test metric", path.display(), i + 2))?;
        rows.push((wallclock, train, test));
    }
    if rows.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    Ok(RunSeries {
        label,
        seed,
        rows,
    })
}

/// Wall-clock seconds of the first round (round 0 included) whose metric is
/// at or below the target; `None` if the run never gets there.
pub fn time_to_target(series: &RunSeries, metric: ReportMetric, target: f64) -> Option<f64> {
    series
        .rows
        .iter()
        .find(|(_, train, test)| {
            let value = match metric {
                ReportMetric::TrainLoss => *train,
                ReportMetric::TestMetric => *test,
            };
            value <= target
        })
        .map(|(wallclock, _, _)| *wallclock)
}

/// Median with unreached runs ranked as infinitely slow: `None` when the
/// median position itself is unreached. Even counts average the two middle
/// values.
pub fn median_time(times: &[Option<f64>]) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = times
        .iter()
        .map(|t| t.unwrap_or(f64::INFINITY))
        .collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let value = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    value.is_finite().then_some(value)
}

pub struct LabelReport {
    pub label: String,
    /// Per-seed results, sorted by seed; unnamed seeds sort first.
    pub per_seed: Vec<(Option<u64>, Option<f64>)>,
    pub median: Option<f64>,
}

pub struct Report {
    pub labels: Vec<LabelReport>,
}

/// Builds the report from every run CSV in a directory; `summary.csv` and
/// `report.csv` are skipped.
pub fn build_report(runs_dir: &Path, metric: ReportMetric, target: f64) -> Result<Report> {
    let mut paths: Vec<_> = fs::read_dir(runs_dir)
        .with_context(|| format!("cannot read directory {}", runs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()) == Some("csv")
                && !matches!(
                    p.file_name().and_then(|n| n.to_str()),
                    Some("summary.csv") | Some("report.csv")
                )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no run CSVs found in {}", runs_dir.display());
    }

    let mut groups: BTreeMap<String, Vec<(Option<u64>, Option<f64>)>> = BTreeMap::new();
    for path in &paths {
        let series = parse_run_csv(path)?;
        let ttt = time_to_target(&series, metric, target);
        groups
            .entry(series.label.clone())
            .or_default()
            .push((series.seed, ttt));
    }

    let labels = groups
        .into_iter()
        .map(|(label, mut per_seed)| {
            per_seed.sort_by_key(|(seed, _)| *seed);
            let times: Vec<Option<f64>> = per_seed.iter().map(|(_, t)| *t).collect();
            let median = median_time(&times);
            LabelReport {
                label,
                per_seed,
                median,
            }
        })
        .collect();
    Ok(Report { labels })
}

fn format_time(t: Option<f64>) -> String {
    match t {
        Some(v) => v.to_string(),
        None => "N/A".to_string(),
    }
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for lr in &self.labels {
            for (seed, ttt) in &lr.per_seed {
                let seed = seed.map_or_else(|| "-".to_string(), |s| s.to_string());
                out.push_str(&format!("{},{},{}\n", lr.label, seed, format_time(*ttt)));
            }
            out.push_str(&format!("{},median,{}\n", lr.label, format_time(lr.median)));
        }
        out
    }

    /// Column-aligned text rendering of the same rows as the CSV.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 3]> = vec![[
            "label".to_string(),
            "seed".to_string(),
            "time_to_target_s".to_string(),
        ]];
        for lr in &self.labels {
            for (seed, ttt) in &lr.per_seed {
                rows.push([
                    lr.label.clone(),
                    seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
                    format_time(*ttt),
                ]);
            }
            rows.push([lr.label.clone(), "median".to_string(), format_time(lr.median)]);
        }
        let widths: Vec<usize> = (0..3)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for row in rows {
            let line = format!(
                "{:<w0$}  {:<w1$}  {}",
                row[0],
                row[1],
                row[2],
                w0 = widths[0],
                w1 = widths[1]
            );
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}
