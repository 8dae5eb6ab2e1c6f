//! Confusion matrices, precision/recall/F1, and max-probability confidence histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

pub fn confusion_matrix(pred: &LabelVector, truth: &LabelVector) -> Result<ConfusionMatrix> {
    if pred.sample_ids() != truth.sample_ids() {
        return Err(Error::SampleSetMismatch(
            "predictions and ground truth are not aligned".into(),
        ));
    }
    let c = truth.n_classes();
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if p >= c {
            return Err(Error::ShapeMismatch(format!(
                "predicted class {p} outside {c} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: truth.class_names().to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a ratio was 0/0 and reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Support-weighted variants, for comparison with the macro figures.
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub has_undefined: bool,
}

/// Which aggregate the tabular output reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Weighted,
}

impl MetricsReport {
    pub fn precision(&self, avg: Averaging) -> f64 {
        match avg {
            Averaging::Macro => self.macro_precision,
            Averaging::Weighted => self.weighted_precision,
        }
    }

    pub fn recall(&self, avg: Averaging) -> f64 {
        match avg {
            Averaging::Macro => self.macro_recall,
            Averaging::Weighted => self.weighted_recall,
        }
    }

    pub fn f1(&self, avg: Averaging) -> f64 {
        match avg {
            Averaging::Macro => self.macro_f1,
            Averaging::Weighted => self.weighted_f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = cm.n_classes();
    let trace: u64 = (0..c).map(|i| cm.counts[i][i]).sum();

    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let row_sum: u64 = cm.counts[k].iter().sum();
        let col_sum: u64 = cm.counts.iter().map(|r| r[k]).sum();
        let (precision, precision_undefined) = ratio(tp, col_sum);
        let (recall, recall_undefined) = ratio(tp, row_sum);
        let (f1, f1_undefined) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        per_class.push(ClassMetrics {
            class_name: cm.class_names[k].clone(),
            precision,
            recall,
            f1,
            support: row_sum,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        });
    }

    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| f(m) * m.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let has_undefined = per_class
        .iter()
        .any(|m| m.precision_undefined || m.recall_undefined || m.f1_undefined);
    Ok(MetricsReport {
        n_samples: total,
        accuracy: trace as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        per_class,
        has_undefined,
    })
}

/// Shortcut: confusion matrix then metrics.
pub fn evaluate(pred: &LabelVector, truth: &LabelVector) -> Result<MetricsReport> {
    classification_metrics(&confusion_matrix(pred, truth)?)
}

/// Plain-text table with Accuracy, F1-Score, Precision, Recall as percentages.
pub fn metrics_table(rows: &[(String, &MetricsReport)], avg: Averaging) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>12}  {:>12}  {:>13}  {:>10}",
        "Model", "Accuracy (%)", "F1-Score (%)", "Precision (%)", "Recall (%)"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>12.2}  {:>12.2}  {:>13.2}  {:>10.2}",
            label,
            r.accuracy * 100.0,
            r.f1(avg) * 100.0,
            r.precision(avg) * 100.0,
            r.recall(avg) * 100.0
        );
    }
    out
}

/// Counts of per-row max probabilities over `bin_count` equal-width bins on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub bin_count: usize,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ConfidenceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bins are `[i/B, (i+1)/B)`, except the last which also holds 1.0.
    pub fn bin_of(&self, confidence: f64) -> usize {
        let b = self.bin_count;
        let mut idx = ((confidence * b as f64).floor().max(0.0) as usize).min(b - 1);
        // floor can land one off from the edge table due to rounding
        if idx > 0 && confidence < self.bin_edges[idx] {
            idx -= 1;
        }
        if idx + 1 < b && confidence >= self.bin_edges[idx + 1] {
            idx += 1;
        }
        idx
    }

    /// `bin_start,bin_end,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for i in 0..self.bin_count {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.counts[i]
            );
        }
        out
    }
}

pub fn confidences(probs: &ProbabilityMatrix) -> Vec<f64> {
    probs
        .rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn confidence_histogram(probs: &ProbabilityMatrix, bin_count: usize) -> Result<ConfidenceHistogram> {
    if bin_count == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let bin_edges = (0..=bin_count).map(|i| i as f64 / bin_count as f64).collect();
    let mut hist = ConfidenceHistogram {
        bin_count,
        bin_edges,
        counts: vec![0; bin_count],
    };
    for conf in confidences(probs) {
        let b = hist.bin_of(conf);
        hist.counts[b] += 1;
    }
    Ok(hist)
}
