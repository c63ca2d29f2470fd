use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ablation::ABLATION_COLUMNS;
use super::HarnessError;
use crate::dataset::TaskMode;
use crate::metrics::{aggregate, GroupKey, MetricRecord};

fn collect_metric_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    if !path.is_dir() {
        return Err(HarnessError::MissingDir(path.to_path_buf()));
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_metric_files(&p, out)?;
        } else if p.file_name().and_then(|n| n.to_str()) == Some("metrics.jsonl") {
            out.push(p);
        }
    }
    Ok(())
}

/// Reads metric records from a JSONL file, or from every `metrics.jsonl`
/// below a directory.
pub fn load_metrics(path: &Path) -> Result<Vec<MetricRecord>, HarnessError> {
    let mut files = Vec::new();
    collect_metric_files(path, &mut files)?;
    let mut records = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file)?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = serde_json::from_str(line).map_err(|e| HarnessError::BadInput {
                path: file.clone(),
                message: format!("line {}: {e}", i + 1),
            })?;
            records.push(rec);
        }
    }
    Ok(records)
}

fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule);
    for row in rows {
        line(&mut out, row);
    }
    out
}

/// Models as rows, modes as columns; each cell is the mean IoU with its
/// 95% half-width, pooled over splits and piece filters.
pub fn metrics_table(records: &[MetricRecord]) -> String {
    let groups = aggregate(records, |r| GroupKey {
        split: String::new(),
        piece_filter: String::new(),
        ..GroupKey::of(r)
    });
    let modes: BTreeSet<TaskMode> = groups.iter().map(|g| g.key.mode).collect();
    let mut cells: BTreeMap<&str, BTreeMap<TaskMode, String>> = BTreeMap::new();
    for g in &groups {
        if let Some(s) = g.iou() {
            cells
                .entry(g.key.model.as_str())
                .or_default()
                .insert(g.key.mode, format!("{:.4} ± {:.4}", s.mean, s.ci95_halfwidth));
        }
    }
    let mut header = vec!["model".to_string()];
    header.extend(modes.iter().map(|m| m.as_str().to_string()));
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|(model, by_mode)| {
            let mut row = vec![model.to_string()];
            row.extend(modes.iter().map(|m| by_mode.get(m).cloned().unwrap_or_else(|| "-".into())));
            row
        })
        .collect();
    render_grid(&header, &rows)
}

/// Long-format CSV: one line per group and metric.
pub fn metrics_csv(records: &[MetricRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "mode", "split", "piece_filter", "metric", "n", "mean", "ci95", "parse_failures", "scene_errors"])?;
    for g in aggregate(records, GroupKey::of) {
        for (name, s) in &g.metrics {
            w.write_record([
                g.key.model.as_str(),
                g.key.mode.as_str(),
                g.key.split.as_str(),
                g.key.piece_filter.as_str(),
                name.as_str(),
                &s.n.to_string(),
                &format!("{:.6}", s.mean),
                &format!("{:.6}", s.ci95_halfwidth),
                &g.parse_failures.to_string(),
                &g.scene_errors.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads an ablation CSV, checking the header, and returns its data rows.
pub fn read_ablation_csv(path: &Path) -> Result<Vec<Vec<String>>, HarnessError> {
    let bad = |message: String| HarnessError::BadInput {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ABLATION_COLUMNS {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect()
}

/// Plain-text rendering of ablation rows in [`ABLATION_COLUMNS`] order.
pub fn ablation_table(rows: &[Vec<String>]) -> String {
    let header: Vec<String> = ABLATION_COLUMNS.iter().map(|s| s.to_string()).collect();
    render_grid(&header, rows)
}
