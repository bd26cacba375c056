//! JSON and CSV emission for pipeline reports.
//!
//! JSON is the canonical form. The CSV writers emit flat tables that mirror
//! the JSON content.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::benchmarks::{ConsistencyReport, RecallReport, ReplicateReport};
use crate::curate::CurationReport;
use crate::error::{Error, Result};
use crate::probe::ProbeSweepResult;

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (perturbation, experiment) plus one `combined` row per
/// perturbation.
pub fn write_consistency_csv(path: impl AsRef<Path>, report: &ConsistencyReport) -> Result<()> {
    let mut rows = Vec::new();
    for r in &report.results {
        for e in &r.experiments {
            rows.push(vec![
                r.perturbation_id.clone(),
                e.experiment_id.clone(),
                e.n_replicates.to_string(),
                e.s_bar.to_string(),
                e.p_value.to_string(),
            ]);
        }
        rows.push(vec![
            r.perturbation_id.clone(),
            "combined".into(),
            r.experiments.iter().map(|e| e.n_replicates).sum::<usize>().to_string(),
            String::new(),
            opt(r.combined_p),
        ]);
    }
    write_rows(
        path.as_ref(),
        &["perturbation_id", "experiment_id", "n_replicates", "s_bar", "p_value"],
        rows,
    )
}

/// One row per experiment pair plus a `median` row.
pub fn write_replicate_csv(path: impl AsRef<Path>, report: &ReplicateReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .per_pair
        .iter()
        .map(|p| {
            vec![
                p.experiment_a.clone(),
                p.experiment_b.clone(),
                p.n_matched.to_string(),
                p.ks.to_string(),
                p.cvm.to_string(),
                p.seed_used.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "median".into(),
        String::new(),
        String::new(),
        report.median_ks.to_string(),
        report.median_cvm.to_string(),
        String::new(),
    ]);
    write_rows(
        path.as_ref(),
        &["experiment_a", "experiment_b", "n_matched", "ks", "cvm", "seed_used"],
        rows,
    )
}

pub fn write_recall_csv(path: impl AsRef<Path>, reports: &[RecallReport]) -> Result<()> {
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.database_name.clone(),
                r.n_known_pairs_in_universe.to_string(),
                r.n_recalled.to_string(),
                opt(r.recall),
                r.low_pct.to_string(),
                r.high_pct.to_string(),
                r.t_low.to_string(),
                r.t_high.to_string(),
                r.universe_size_genes.to_string(),
            ]
        })
        .collect();
    write_rows(
        path.as_ref(),
        &[
            "database_name",
            "n_known_pairs_in_universe",
            "n_recalled",
            "recall",
            "low_pct",
            "high_pct",
            "t_low",
            "t_high",
            "universe_size_genes",
        ],
        rows,
    )
}

/// One row per block: index, balanced accuracy and whether it is `b*`.
pub fn write_sweep_csv(path: impl AsRef<Path>, result: &ProbeSweepResult) -> Result<()> {
    let rows = result
        .per_block
        .iter()
        .map(|b| {
            vec![
                b.block_index.to_string(),
                b.balanced_accuracy.to_string(),
                (b.block_index == result.best_block).to_string(),
                b.converged.to_string(),
                b.iterations_used.to_string(),
            ]
        })
        .collect();
    write_rows(
        path.as_ref(),
        &["block_index", "balanced_accuracy", "is_best", "converged", "iterations_used"],
        rows,
    )
}

pub fn write_curation_csv(path: impl AsRef<Path>, report: &CurationReport) -> Result<()> {
    let rows = report
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step_name.clone(),
                s.rows_in.to_string(),
                s.rows_out.to_string(),
                s.rows_dropped.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &["step_name", "rows_in", "rows_out", "rows_dropped"], rows)
}
