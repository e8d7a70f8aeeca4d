//! Confusion matrices, precision/recall/F1 reports and centroid cosine
//! similarity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{truths} truths but {preds} predictions")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("feature schemas differ")]
    SchemaMismatch,
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("centroid of group `{0}` is the zero vector")]
    ZeroCentroid(String),
}

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(truths: &[usize], preds: &[usize], n_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if truths.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            truths: truths.len(),
            preds: preds.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truths.iter().zip(preds) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= n_classes) {
            return Err(EvalError::LabelOutOfRange { label, n_classes });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Aggregate,
    pub weighted_avg: Aggregate,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Zero denominators yield 0 rather than NaN.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.counts[c][c];
            let support: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let trace: u64 = (0..n).map(|c| cm.counts[c][c]).sum();
    let avg = |weight: &dyn Fn(&ClassMetrics) -> f64| {
        let w: f64 = per_class.iter().map(weight).sum();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(|m| weight(m) * f(m)).sum::<f64>() / w
        };
        Aggregate {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        }
    };
    Ok(MetricsReport {
        accuracy: ratio(trace, total),
        macro_avg: avg(&|_| 1.0),
        weighted_avg: avg(&|m| m.support as f64),
        per_class,
    })
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, EvalError> {
    if a.schema() != b.schema() {
        return Err(EvalError::SchemaMismatch);
    }
    cosine(a.values(), b.values())
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// Square CSV with a leading `class` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Cosine similarity between group mean vectors. The matrix is filled from
/// the upper triangle, so it is exactly symmetric with a unit diagonal.
pub fn centroid_similarity_matrix(groups: &[(String, Vec<FeatureVector>)]) -> Result<SimilarityMatrix, EvalError> {
    let mut centroids = Vec::with_capacity(groups.len());
    let schema = groups.iter().find_map(|(_, g)| g.first()).map(|v| v.schema().clone());
    for (name, members) in groups {
        let first = members.first().ok_or_else(|| EvalError::EmptyGroup(name.clone()))?;
        let mut sum = vec![0.0; first.len()];
        for v in members {
            if Some(v.schema()) != schema.as_ref() {
                return Err(EvalError::SchemaMismatch);
            }
            for (s, x) in sum.iter_mut().zip(v.values()) {
                *s += x;
            }
        }
        let n = members.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        if sum.iter().all(|&s| s == 0.0) {
            return Err(EvalError::ZeroCentroid(name.clone()));
        }
        centroids.push(sum);
    }
    let k = centroids.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let c = cosine(&centroids[i], &centroids[j])?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        names: groups.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// Scores of one model on one test set, with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub features: String,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-class table followed by the confusion matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model {}  features {}  seed {}  config {}", self.model, self.features, self.seed, self.config_hash);
        out.push('\n');
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(12);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "class", "precision", "recall", "f1", "support");
        for (name, m) in self.class_names.iter().zip(&self.metrics.per_class) {
            let _ = writeln!(out, "{name:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}", m.precision, m.recall, m.f1, m.support);
        }
        for (label, a) in [("macro avg", &self.metrics.macro_avg), ("weighted avg", &self.metrics.weighted_avg)] {
            let _ = writeln!(out, "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}", a.precision, a.recall, a.f1);
        }
        let _ = writeln!(out, "{:<width$}  {:>9.4}", "accuracy", self.metrics.accuracy);
        out.push_str("\nconfusion (rows = truth, columns = prediction)\n");
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            let _ = write!(out, "{name:<width$}");
            for c in row {
                let _ = write!(out, " {c:>6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Which aggregate a results table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    #[default]
    Weighted,
}

/// One row per (features, model): accuracy, precision, recall and F1.
pub fn results_table(rows: &[&EvaluationReport], averaging: Averaging) -> String {
    let fw = rows.iter().map(|r| r.features.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<fw$}  {:<8}  {:>8}  {:>9}  {:>8}  {:>8}",
        "Feature", "Model", "Accuracy", "Precision", "Recall", "F1-score"
    );
    for r in rows {
        let a = match averaging {
            Averaging::Macro => r.metrics.macro_avg,
            Averaging::Weighted => r.metrics.weighted_avg,
        };
        let _ = writeln!(
            out,
            "{:<fw$}  {:<8}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}",
            r.features, r.model, r.metrics.accuracy, a.precision, a.recall, a.f1
        );
    }
    out
}
