//! Confusion-matrix scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes. Class 0 is benign.
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

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label pair ({t}, {p}) outside {n_classes} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub fp_rate: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<u64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro scores over classes that occur as a true or predicted label.
/// 0/0 precision or recall counts as 0. `fp_rate` is the share of benign
/// rows predicted as any attack.
pub fn score(cm: &ConfusionMatrix) -> Result<ScoreReport> {
    if cm.total() == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    let c = cm.n_classes();
    let support: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..c).map(|j| cm.counts.iter().map(|r| r[j]).sum()).collect();
    let mut per_class_f1 = vec![0.0; c];
    let (mut f1_sum, mut rec_sum, mut prec_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let recall = ratio(tp, support[k]);
        let precision = ratio(tp, predicted[k]);
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class_f1[k] = f1;
        if support[k] == 0 && predicted[k] == 0 {
            continue;
        }
        f1_sum += f1;
        rec_sum += recall;
        prec_sum += precision;
        n += 1;
    }
    let n = n as f64;
    let fp_rate = if c == 0 {
        0.0
    } else {
        ratio(support[0] - cm.counts[0][0], support[0])
    };
    Ok(ScoreReport {
        macro_f1: f1_sum / n,
        macro_recall: rec_sum / n,
        macro_precision: prec_sum / n,
        fp_rate,
        per_class_f1,
        support,
    })
}

pub fn score_labels(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ScoreReport> {
    score(&confusion(y_true, y_pred, n_classes)?)
}

/// Relative macro-F1 drop from train to test.
pub fn generalization_gap(f1_train: f64, f1_test: f64) -> Result<f64> {
    if f1_train <= 0.0 {
        return Err(Error::InvalidArgument("train F1 must be positive".into()));
    }
    Ok((f1_train - f1_test) / f1_train)
}
