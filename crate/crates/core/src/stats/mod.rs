//! Confusion matrices, per-class and averaged metrics, and paired McNemar
//! tests over the three assessment labels.

pub mod mcnemar;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::AssessmentLabel;

pub use mcnemar::{chi_square_df1_sf, mcnemar_category, mcnemar_from_cells, McNemarCells, McNemarMethod, McNemarResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("nothing to evaluate: confusion matrix is empty")]
    EmptyEvaluation,
    #[error("paired inputs differ in length: {0} vs {1} vs {2}")]
    LengthMismatch(usize, usize, usize),
}

/// Counts indexed `[truth][prediction]` in `AssessmentLabel::ALL` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn add(&mut self, truth: AssessmentLabel, pred: AssessmentLabel) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn get(&self, truth: AssessmentLabel, pred: AssessmentLabel) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Records whose truth is `label`.
    pub fn support(&self, label: AssessmentLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    /// Records predicted as `label`.
    pub fn predicted(&self, label: AssessmentLabel) -> u64 {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }
}

pub fn build_confusion<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (AssessmentLabel, AssessmentLabel)>,
{
    let mut cm = ConfusionMatrix::default();
    for (truth, pred) in pairs {
        cm.add(truth, pred);
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when precision or recall had a zero denominator and was taken
    /// as 0.
    #[serde(default)]
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-vs-rest precision, recall and F1 for `label`.
pub fn class_metrics(cm: &ConfusionMatrix, label: AssessmentLabel) -> ClassMetrics {
    let tp = cm.get(label, label);
    let precision = ratio(tp, cm.predicted(label));
    let recall = ratio(tp, cm.support(label));
    let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
    ClassMetrics {
        precision: p,
        recall: r,
        f1: f1_score(p, r),
        support: cm.support(label),
        undefined: precision.is_none() || recall.is_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correct {
    pub correct: u64,
    pub total: u64,
}

impl Correct {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: u64,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<AssessmentLabel, ClassMetrics>,
    pub pct_correct: BTreeMap<AssessmentLabel, Correct>,
}

/// Accuracy, pooled (micro) F1, unweighted (macro) F1 and per-class
/// metrics.
pub fn summarize(cm: &ConfusionMatrix) -> Result<EvaluationReport, StatsError> {
    let total = cm.total();
    if total == 0 {
        return Err(StatsError::EmptyEvaluation);
    }
    let tp = cm.trace();
    // every error is one false positive and one false negative
    let errors = total - tp;
    let micro_f1 = (2 * tp) as f64 / (2 * tp + 2 * errors) as f64;

    let per_class: BTreeMap<_, _> = AssessmentLabel::ALL.iter().map(|&l| (l, class_metrics(cm, l))).collect();
    let macro_f1 = per_class.values().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    let pct_correct = AssessmentLabel::ALL
        .iter()
        .map(|&l| (l, Correct { correct: cm.get(l, l), total: cm.support(l) }))
        .collect();

    Ok(EvaluationReport {
        total,
        accuracy: tp as f64 / total as f64,
        micro_f1,
        macro_f1,
        per_class,
        pct_correct,
    })
}
