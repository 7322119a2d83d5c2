//! Classification metrics: confusion matrix, per-class precision, recall
//! and F1, accuracy and macro-F1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Metrics of one evaluation run. `confusion[t][p]` counts samples of true
/// class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    /// Mean single-sample latency, filled in by a benchmark run.
    pub latency_ms: Option<f64>,
    pub params: u64,
    pub macs: u64,
    pub gmac: f64,
}

pub fn confusion_matrix(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if labels.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (row, (&t, &p)) in labels.iter().zip(predictions).enumerate() {
        if t >= classes || p >= classes {
            return Err(Error::InvalidTarget {
                row,
                target: t.max(p),
            });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores. A class without support or predictions scores 0.
pub fn per_class_metrics(confusion: &[Vec<u64>]) -> Vec<ClassMetrics> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

pub fn accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    ratio(trace, total)
}

/// Unweighted mean of per-class F1 over all classes, including classes with
/// no support.
pub fn macro_f1(confusion: &[Vec<u64>]) -> f64 {
    let per = per_class_metrics(confusion);
    per.iter().map(|m| m.f1).sum::<f64>() / per.len().max(1) as f64
}

impl EvalReport {
    pub fn from_predictions(variant: &str, labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(labels, predictions, classes)?;
        Ok(Self {
            variant: variant.to_string(),
            samples: labels.len() as u64,
            accuracy: accuracy(&confusion),
            macro_f1: macro_f1(&confusion),
            per_class: per_class_metrics(&confusion),
            confusion,
            latency_ms: None,
            params: 0,
            macs: 0,
            gmac: 0.0,
        })
    }

    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\pred");
        for p in 0..k {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
