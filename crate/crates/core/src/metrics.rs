//! The six evaluation metrics: accuracy, macro precision/recall/F1, and
//! macro one-vs-rest AUROC/AUPRC, plus the confusion matrix they derive from.
//!
//! Conventions, chosen so an independent oracle can match to 1e-9:
//! * predictions are argmax over class probabilities, lowest index on ties;
//! * a class with no predicted and no true instances contributes
//!   precision = recall = F1 = 0 to the macro average;
//! * AUROC uses the rank statistic with tied scores counted 0.5 per pair;
//! * AUPRC is average precision over the step-wise precision-recall curve,
//!   thresholds at distinct score values;
//! * classes with no positive or no negative instance are excluded from the
//!   AUROC/AUPRC macro averages (both are undefined there).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty evaluation set")]
    Empty,
    #[error("probability row {index} has {got} entries, expected {expected}")]
    RowShape { index: usize, got: usize, expected: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}

/// One evaluation pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// The six metrics in reporting order.
    pub fn values(&self) -> [f64; 6] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auroc, self.auprc]
    }

    pub fn tsv_line(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{:.6}", v))
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub const HEADER: &'static str = "accuracy\tprecision\trecall\tf1\tauroc\tauprc";
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Rank-based AUROC (Mann-Whitney statistic, midranks for ties).
/// `None` when the class has no positive or no negative instance.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied group shares the midrank
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: sum over distinct-score thresholds of
/// (R_k − R_{k−1}) · P_k. `None` when the class has no positive instance.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 || total_pos == positive.len() && positive.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if positive[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// All six metrics from per-sample class probabilities and true labels.
pub fn compute_metrics(
    probs: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
) -> Result<MetricsReport, MetricsError> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(MetricsError::Empty);
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != classes {
            return Err(MetricsError::RowShape { index: i, got: row.len(), expected: classes });
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(MetricsError::LabelRange { label: bad, classes });
    }

    let predictions: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let confusion = confusion_matrix(&predictions, labels, classes);
    let total = labels.len() as f64;
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    let accuracy = correct as f64 / total;

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for (k, row) in confusion.iter().enumerate() {
        let tp = row[k] as f64;
        let predicted: f64 = (0..classes).map(|l| confusion[l][k] as f64).sum();
        let actual: f64 = row.iter().map(|&v| v as f64).sum();
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision_sum += p;
        recall_sum += r;
        f1_sum += f;
    }

    let mut auroc_sum = 0.0;
    let mut auroc_n = 0usize;
    let mut auprc_sum = 0.0;
    let mut auprc_n = 0usize;
    for k in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|r| r[k]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Some(a) = binary_auroc(&scores, &positive) {
            auroc_sum += a;
            auroc_n += 1;
        }
        let pos = positive.iter().filter(|&&p| p).count();
        if pos > 0 {
            if let Some(a) = average_precision(&scores, &positive) {
                auprc_sum += a;
                auprc_n += 1;
            }
        }
    }

    let k = classes as f64;
    Ok(MetricsReport {
        accuracy,
        precision: precision_sum / k,
        recall: recall_sum / k,
        f1: f1_sum / k,
        auroc: if auroc_n > 0 { auroc_sum / auroc_n as f64 } else { 0.0 },
        auprc: if auprc_n > 0 { auprc_sum / auprc_n as f64 } else { 0.0 },
        confusion,
    })
}
