//! Result tables: one row per (generator, retriever, k), as aligned text and
//! as JSON lines.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unirag_core::metrics::MetricReport;

use crate::evaluate::EvalSummary;
use crate::manifest::RunManifest;

/// Generator name used for retriever-baseline rows.
pub const BASELINE_GENERATOR: &str = "retrieval-top1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub generator: String,
    pub retriever: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub evaluated: usize,
    pub dropped: usize,
    pub metrics: MetricReport,
}

/// Rows for one run: the generator's, then the baseline's if present.
pub fn rows_for(manifest: &RunManifest, summary: &EvalSummary) -> Vec<ReportRow> {
    let c = &manifest.config;
    let row = |generator: &str, r: &crate::evaluate::EvalResult| ReportRow {
        task: c.task_name().to_owned(),
        generator: generator.to_owned(),
        retriever: c.retriever.as_str().to_owned(),
        k: c.k,
        seed: c.seed,
        evaluated: r.evaluated,
        dropped: r.dropped,
        metrics: r.metrics.clone(),
    };
    let mut out = vec![row(&manifest.profile.name, &summary.generated)];
    if let Some(b) = &summary.baseline {
        out.push(row(BASELINE_GENERATOR, b));
    }
    out
}

const METRIC_ORDER: [&str; 11] = [
    "bleu1",
    "bleu2",
    "bleu3",
    "bleu4",
    "cider",
    "rouge_l",
    "fid",
    "fid_retrieved",
    "clip_score",
    "is",
    "is_sd",
];

fn metric_columns(rows: &[ReportRow]) -> Vec<String> {
    let present: BTreeSet<&str> = rows
        .iter()
        .flat_map(|r| r.metrics.values.keys().map(String::as_str))
        .collect();
    let mut cols: Vec<String> = METRIC_ORDER
        .iter()
        .filter(|m| present.contains(*m))
        .map(|m| (*m).to_owned())
        .collect();
    cols.extend(
        present
            .iter()
            .filter(|m| !METRIC_ORDER.contains(m))
            .map(|m| (*m).to_owned()),
    );
    cols
}

pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        (&a.generator, &a.retriever, a.k, &a.task, a.seed)
            .cmp(&(&b.generator, &b.retriever, b.k, &b.task, b.seed))
    });
}

/// Aligned plain-text table. Metric values have four decimals; a missing
/// metric prints as `-`.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let metrics = metric_columns(&rows);
    let mut header: Vec<String> = ["generator", "retriever", "k", "n", "dropped"]
        .iter()
        .map(|s| (*s).to_owned())
        .collect();
    header.extend(metrics.iter().cloned());
    let mut table = vec![header];
    for r in &rows {
        let mut line = vec![
            r.generator.clone(),
            r.retriever.clone(),
            r.k.to_string(),
            r.evaluated.to_string(),
            r.dropped.to_string(),
        ];
        line.extend(metrics.iter().map(|m| match r.metrics.get(m) {
            Some(v) => format!("{v:.4}"),
            None => "-".to_owned(),
        }));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &table {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c < 2 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One JSON object per row, sorted like the table.
pub fn render_jsonl(rows: &[ReportRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}
