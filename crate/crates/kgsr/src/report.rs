//! Evaluation report: aligned text table and JSON.

use kgsr_core::metrics::EvalReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// e.g. `N=100` or `random`.
    pub label: String,
    pub ndcg: f64,
    pub recall: f64,
    pub hit_rate: f64,
    pub precision: f64,
    pub evaluated_users: usize,
    pub skipped_users: usize,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, r: &EvalReport) -> Self {
        Self {
            label: label.into(),
            ndcg: r.ndcg,
            recall: r.recall,
            hit_rate: r.hit_rate,
            precision: r.precision,
            evaluated_users: r.evaluated,
            skipped_users: r.skipped,
        }
    }

    pub fn metrics(&self) -> [f64; 4] {
        [self.ndcg, self.recall, self.hit_rate, self.precision]
    }
}

/// All values are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k: usize,
    pub metrics: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(k: usize, rows: Vec<ReportRow>) -> Self {
        Self {
            k,
            metrics: ["ndcg", "recall", "hit_rate", "precision"]
                .iter()
                .map(|m| format!("{m}@{k}"))
                .collect(),
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut header: Vec<String> = vec!["run".into()];
        header.extend(self.metrics.iter().cloned());
        header.extend(["users".into(), "skipped".into()]);
        let mut cells = vec![header];
        for r in &self.rows {
            let mut line = vec![r.label.clone()];
            line.extend(r.metrics().iter().map(|v| format!("{v:.4}")));
            line.extend([r.evaluated_users.to_string(), r.skipped_users.to_string()]);
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 0 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
