//! `caref report`: per-cell summary statistics of a sweep CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::sweep::{RunRecord, SWEEP_HEADER};
use crate::train::prepare_out_dir;

pub const SUMMARY_FILE: &str = "summary.json";

/// Mean and sample standard deviation; the deviation is 0 for a single
/// value. Both are `None` when there are no values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: None,
                std: None,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        Self {
            mean: Some(mean),
            std: Some(std),
        }
    }

    fn render(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
            _ => "n/a".into(),
        }
    }
}

/// Statistics over the seeds of one grid point. Diverged runs are counted
/// but excluded from the statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_sced: f64,
    pub lambda_kl: f64,
    pub runs: usize,
    pub diverged: usize,
    pub accuracy: Stat,
    pub mean_effective_support: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: usize,
    pub cells: Vec<CellSummary>,
}

/// Parses a sweep CSV. The header must match exactly.
pub fn read_records(text: &str, origin: &str) -> Result<Vec<RunRecord>> {
    let header = text.lines().next().unwrap_or("");
    if header.trim_end_matches('\r') != SWEEP_HEADER {
        return Err(CliError::Usage(format!(
            "{origin}:1: unexpected header (expected `{SWEEP_HEADER}`)"
        )));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.deserialize::<RunRecord>() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Usage(format!("{origin}:{line}: malformed row: {e}"))
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn same_cell(a: &RunRecord, b: &RunRecord) -> bool {
    a.alpha == b.alpha
        && a.beta == b.beta
        && a.lambda_sced == b.lambda_sced
        && a.lambda_kl == b.lambda_kl
}

pub fn summarize(records: &[RunRecord]) -> Summary {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.beta.total_cmp(&b.beta))
            .then(a.lambda_sced.total_cmp(&b.lambda_sced))
            .then(a.lambda_kl.total_cmp(&b.lambda_kl))
    });
    let mut cells = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let end = start
            + sorted[start..]
                .iter()
                .take_while(|r| same_cell(r, sorted[start]))
                .count();
        let group = &sorted[start..end];
        let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.is_ok()).collect();
        let column = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|r| f(r)).collect()
        };
        let first = group[0];
        cells.push(CellSummary {
            alpha: first.alpha,
            beta: first.beta,
            lambda_sced: first.lambda_sced,
            lambda_kl: first.lambda_kl,
            runs: group.len(),
            diverged: group.len() - ok.len(),
            accuracy: Stat::of(&column(|r| r.accuracy)),
            mean_effective_support: Stat::of(&column(|r| r.mean_effective_support)),
        });
        start = end;
    }
    Summary {
        rows: records.len(),
        cells,
    }
}

pub fn render_table(s: &Summary) -> String {
    let header = [
        "alpha",
        "beta",
        "lambda_sced",
        "lambda_kl",
        "runs",
        "diverged",
        "accuracy",
        "effective support",
    ];
    let rows: Vec<[String; 8]> = s
        .cells
        .iter()
        .map(|c| {
            [
                c.alpha.to_string(),
                c.beta.to_string(),
                c.lambda_sced.to_string(),
                c.lambda_kl.to_string(),
                c.runs.to_string(),
                c.diverged.to_string(),
                c.accuracy.render(),
                c.mean_effective_support.render(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    for row in &rows {
        line(&row.each_ref().map(String::as_str));
    }
    out
}

pub fn cmd_report(csv_path: &Path, out: Option<&Path>) -> Result<Summary> {
    let text = fs::read_to_string(csv_path).map_err(|e| CliError::io(csv_path, e))?;
    let records = read_records(&text, &csv_path.display().to_string())?;
    let summary = summarize(&records);
    print!("{}", render_table(&summary));
    if let Some(dir) = out {
        prepare_out_dir(dir)?;
        let path = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Usage(format!("cannot serialize summary: {e}")))?;
        fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    Ok(summary)
}
