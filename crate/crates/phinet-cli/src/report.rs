//! Evaluation report: one JSON document plus an aligned text rendering of
//! the confusion matrix.

use anyhow::{Context, Result};
use phinet_core::stats::{format_percent, ConfusionMatrix};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub errors: usize,
    pub total: usize,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// confusion[i][j] = items of true class i predicted as class j
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
}

impl EvalReport {
    pub fn from_confusion(matrix: &ConfusionMatrix, classes: &[String]) -> Self {
        let k = matrix.classes();
        let total = matrix.total();
        let correct = matrix.trace();
        let confusion = (0..k)
            .map(|i| (0..k).map(|j| matrix.count(i, j)).collect())
            .collect();
        EvalReport {
            accuracy: correct as f64 / total as f64,
            correct,
            errors: total - correct,
            total,
            per_class_accuracy: matrix.per_class_accuracy(),
            confusion,
            classes: classes.to_vec(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).context("encoding report")?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Aligned table: true classes down, predicted classes across.
    pub fn render_table(&self) -> String {
        let k = self.classes.len();
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(k + 1);
        let mut header = vec!["true \\ predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        header.push("class acc".into());
        cells.push(header);
        for i in 0..k {
            let mut row = vec![self.classes[i].clone()];
            row.extend(self.confusion[i].iter().map(|c| c.to_string()));
            row.push(match self.per_class_accuracy[i] {
                Some(a) => format_percent(a),
                None => "-".into(),
            });
            cells.push(row);
        }

        let cols = cells[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for row in &cells {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                // right-align the numbers, left-align the label column
                if c == 0 {
                    out.push_str(&format!("{cell:<width$}", width = widths[c]));
                } else {
                    out.push_str(&format!("{cell:>width$}", width = widths[c]));
                }
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "accuracy {} ({} of {}, {} errors)\n",
            format_percent(self.accuracy),
            self.correct,
            self.total,
            self.errors
        ));
        out
    }
}
