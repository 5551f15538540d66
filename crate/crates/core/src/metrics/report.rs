use std::fmt::Write as _;

use serde::Serialize;

use crate::data::ClassTaxonomy;
use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            num_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.num_classes;
        if truth >= n || pred >= n {
            return Err(Error::invalid(format!("class pair ({truth}, {pred}) out of range for {n} classes")));
        }
        self.counts[truth * n + pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes.max(1)).map(|r| r.to_vec()).collect()
    }

    fn require_samples(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        Ok(())
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &t) in preds.iter().zip(labels) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// Mean recall over the classes that have at least one true sample.
pub fn bma(cm: &ConfusionMatrix) -> Result<f64> {
    cm.require_samples()?;
    let recalls: Vec<f64> = (0..cm.num_classes())
        .filter(|&c| cm.row_sum(c) > 0)
        .map(|c| cm.get(c, c) as f64 / cm.row_sum(c) as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy plus support-weighted precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedPrf {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScores>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision is 0 for a class that is never predicted; recall is 0 for a
/// class without support (its weight is 0 anyway).
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<WeightedPrf> {
    cm.require_samples()?;
    let total = cm.total() as f64;
    let per_class: Vec<ClassScores> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let (col, row) = (cm.col_sum(c), cm.row_sum(c));
            let precision = if col == 0 { 0.0 } else { tp / col as f64 };
            let recall = if row == 0 { 0.0 } else { tp / row as f64 };
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: row,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassScores) -> f64| -> f64 {
        per_class.iter().map(|s| s.support as f64 / total * f(s)).sum()
    };
    Ok(WeightedPrf {
        accuracy: cm.trace() as f64 / total,
        precision: weighted(|s| s.precision),
        recall: weighted(|s| s.recall),
        f1: weighted(|s| s.f1),
        per_class,
    })
}

/// Malignant-versus-benign view of a multi-class confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryReport {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Collapses classes by malignancy; malignant is the positive class. Rates
/// with an empty denominator are 0.
pub fn binary_cancer_report(cm: &ConfusionMatrix, taxonomy: &ClassTaxonomy) -> Result<BinaryReport> {
    if taxonomy.len() != cm.num_classes() {
        return Err(Error::invalid(format!(
            "taxonomy has {} classes, matrix {}",
            taxonomy.len(),
            cm.num_classes()
        )));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for t in 0..cm.num_classes() {
        for p in 0..cm.num_classes() {
            let n = cm.get(t, p);
            match (taxonomy.is_malignant(t), taxonomy.is_malignant(p)) {
                (true, true) => tp += n,
                (true, false) => fn_ += n,
                (false, false) => tn += n,
                (false, true) => fp += n,
            }
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(BinaryReport {
        tp,
        fn_,
        tn,
        fp,
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Every evaluation figure derived from one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub bma: f64,
    pub accuracy: f64,
    pub weighted: WeightedPrf,
    pub binary: BinaryReport,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let bma = bma(&confusion)?;
        let weighted = weighted_prf(&confusion)?;
        let binary = binary_cancer_report(&confusion, taxonomy)?;
        debug_assert!((weighted.recall - weighted.accuracy).abs() < 1e-12);
        Ok(MetricsReport {
            bma,
            accuracy: weighted.accuracy,
            weighted,
            binary,
            confusion,
        })
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], taxonomy: &ClassTaxonomy) -> Result<Self> {
        Self::from_confusion(confusion_matrix(preds, labels, taxonomy.len())?, taxonomy)
    }

    /// `metric,value` rows followed by the confusion matrix block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: f64| {
            let _ = writeln!(out, "{k},{v}");
        };
        row("bma", self.bma);
        row("accuracy", self.accuracy);
        row("weighted_precision", self.weighted.precision);
        row("weighted_recall", self.weighted.recall);
        row("weighted_f1", self.weighted.f1);
        for (c, s) in self.weighted.per_class.iter().enumerate() {
            row(&format!("precision_{c}"), s.precision);
            row(&format!("recall_{c}"), s.recall);
            row(&format!("f1_{c}"), s.f1);
            row(&format!("support_{c}"), s.support as f64);
        }
        row("cancer_accuracy", self.binary.accuracy);
        row("cancer_precision", self.binary.precision);
        row("cancer_recall", self.binary.recall);
        row("cancer_f1", self.binary.f1);
        row("cancer_tp", self.binary.tp as f64);
        row("cancer_fn", self.binary.fn_ as f64);
        row("cancer_tn", self.binary.tn as f64);
        row("cancer_fp", self.binary.fp as f64);
        out.push('\n');
        out.push_str("true\\pred");
        for p in 0..self.confusion.num_classes() {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
        for (t, r) in self.confusion.rows().iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in r {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
