//! Confusion-matrix evaluation: accuracy, precision, recall, F1.
//!
//! Degenerate ratios (no predicted positives, no actual positives) are scored
//! 0.0 and flagged on the report instead of producing NaN.

use std::fmt::Write as _;

use crate::error::{contract, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

/// One-vs-rest view of a single class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds the 2×2 matrix with class 1 as the positive class.
    pub fn from_binary(c: BinaryCounts) -> Self {
        let mut m = Self::new(2);
        m.counts = vec![c.tn, c.fp, c.fn_, c.tp];
        m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Counts for `positive` against every other class.
    pub fn binary(&self, positive: usize) -> BinaryCounts {
        let tp = self.get(positive, positive);
        let fp = (0..self.classes).map(|t| self.get(t, positive)).sum::<usize>() - tp;
        let fn_ = (0..self.classes).map(|p| self.get(positive, p)).sum::<usize>() - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

/// Tallies predictions against labels. For two classes, class 1 is positive.
pub fn confusion(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    contract!(
        predictions.len() == labels.len(),
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    contract!(!labels.is_empty(), "nothing to score");
    let mut m = ConfusionMatrix::new(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        contract!(p < classes && t < classes, "class out of range: pred {p}, label {t}, classes {classes}");
        m.counts[t * classes + p] += 1;
    }
    Ok(m)
}

/// `(TP + TN) / total`, i.e. trace over total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    contract!(cm.total() > 0, "accuracy of an empty confusion matrix");
    Ok(cm.trace() as f64 / cm.total() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// No positive predictions: precision scored 0.
    pub precision_undefined: bool,
    /// No actual positives: recall scored 0.
    pub recall_undefined: bool,
}

pub fn precision_recall(cm: &ConfusionMatrix, positive: usize) -> PrecisionRecall {
    let b = cm.binary(positive);
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    PrecisionRecall {
        precision: ratio(b.tp, b.tp + b.fp),
        recall: ratio(b.tp, b.tp + b.fn_),
        precision_undefined: b.tp + b.fp == 0,
        recall_undefined: b.tp + b.fn_ == 0,
    }
}

/// Harmonic mean `2PR / (P + R)`; zero when both are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of per-class one-vs-rest F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let total: f64 = (0..cm.classes())
        .map(|c| {
            let pr = precision_recall(cm, c);
            f1(pr.precision, pr.recall)
        })
        .sum();
    total / cm.classes() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n_examples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(&cm)?;
        let per_class: Vec<ClassMetrics> = (0..cm.classes())
            .map(|c| {
                let pr = precision_recall(&cm, c);
                ClassMetrics {
                    precision: pr.precision,
                    recall: pr.recall,
                    f1: f1(pr.precision, pr.recall),
                    support: (0..cm.classes()).map(|p| cm.get(c, p)).sum(),
                    precision_undefined: pr.precision_undefined,
                    recall_undefined: pr.recall_undefined,
                }
            })
            .collect();
        let k = per_class.len() as f64;
        Ok(MetricsReport {
            n_examples: cm.total(),
            accuracy,
            macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
            macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
            macro_f1: macro_f1(&cm),
            per_class,
            confusion: cm,
        })
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        Self::from_confusion(confusion(predictions, labels, classes)?)
    }

    /// `"binary"` (class 1 positive) for two classes, `"macro"` otherwise.
    pub fn f1_averaging(&self) -> &'static str {
        if self.per_class.len() == 2 {
            "binary"
        } else {
            "macro"
        }
    }

    /// The single F1 figure, averaged as named by [`Self::f1_averaging`].
    pub fn f1(&self) -> f64 {
        if self.per_class.len() == 2 {
            self.per_class[1].f1
        } else {
            self.macro_f1
        }
    }

    pub fn has_degenerate(&self) -> bool {
        self.per_class
            .iter()
            .any(|c| c.precision_undefined || c.recall_undefined)
    }

    /// Aligned text table: the 2×2 layout for binary tasks, the full
    /// true-by-predicted matrix otherwise, then the metric rows.
    pub fn render_table(&self) -> String {
        let cm = &self.confusion;
        let mut s = String::new();
        if cm.classes() == 2 {
            let b = cm.binary(1);
            let _ = writeln!(s, "{:<18}{:>18}{:>18}", "", "predicted pos", "predicted neg");
            let _ = writeln!(s, "{:<18}{:>18}{:>18}", "actual positive", format!("TP={}", b.tp), format!("FN={}", b.fn_));
            let _ = writeln!(s, "{:<18}{:>18}{:>18}", "actual negative", format!("FP={}", b.fp), format!("TN={}", b.tn));
        } else {
            let _ = write!(s, "{:<12}", "true\\pred");
            for p in 0..cm.classes() {
                let _ = write!(s, "{:>8}", p);
            }
            s.push('\n');
            for t in 0..cm.classes() {
                let _ = write!(s, "{:<12}", t);
                for p in 0..cm.classes() {
                    let _ = write!(s, "{:>8}", cm.get(t, p));
                }
                s.push('\n');
            }
        }
        s.push('\n');
        let _ = writeln!(s, "{:<8}{:>11}{:>11}{:>11}{:>9}", "class", "precision", "recall", "f1", "support");
        for (c, m) in self.per_class.iter().enumerate() {
            let flag = if m.precision_undefined || m.recall_undefined { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:<8}{:>11.4}{:>11.4}{:>11.4}{:>9}{flag}",
                c, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            s,
            "{:<8}{:>11.4}{:>11.4}{:>11.4}{:>9}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.n_examples
        );
        let _ = writeln!(
            s,
            "accuracy {:.4}  f1 {:.4} ({})",
            self.accuracy,
            self.f1(),
            self.f1_averaging()
        );
        if self.has_degenerate() {
            s.push_str("* zero denominator, scored as 0\n");
        }
        s
    }

    /// `metric,value` lines; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "n_examples,{}", self.n_examples);
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        let _ = writeln!(s, "f1,{}", self.f1());
        let _ = writeln!(s, "f1_averaging,{}", self.f1_averaging());
        let _ = writeln!(s, "macro_precision,{}", self.macro_precision);
        let _ = writeln!(s, "macro_recall,{}", self.macro_recall);
        let _ = writeln!(s, "macro_f1,{}", self.macro_f1);
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "class{c}_precision,{}", m.precision);
            let _ = writeln!(s, "class{c}_recall,{}", m.recall);
            let _ = writeln!(s, "class{c}_f1,{}", m.f1);
            let _ = writeln!(s, "class{c}_support,{}", m.support);
            let _ = writeln!(s, "class{c}_degenerate,{}", m.precision_undefined || m.recall_undefined);
        }
        for t in 0..self.confusion.classes() {
            for p in 0..self.confusion.classes() {
                let _ = writeln!(s, "count_{t}_{p},{}", self.confusion.get(t, p));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), 4);
        let b = cm.binary(1);
        assert_eq!((b.fp, b.fn_), (0, 0));
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm), 1.0);
    }

    #[test]
    fn hand_enumerated_binary_case() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(cm.binary(1), BinaryCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
    }

    #[test]
    fn accuracy_examples() {
        let cm = ConfusionMatrix::from_binary(BinaryCounts { tp: 2, tn: 3, fp: 1, fn_: 4 });
        assert_eq!(accuracy(&cm).unwrap(), 0.5);
        let wrong = confusion(&[1, 0, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(accuracy(&wrong).unwrap(), 0.0);
        assert!(accuracy(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn precision_recall_examples() {
        let cm = ConfusionMatrix::from_binary(BinaryCounts { tp: 3, tn: 0, fp: 1, fn_: 1 });
        let pr = precision_recall(&cm, 1);
        assert_eq!((pr.precision, pr.recall), (0.75, 0.75));

        let none_predicted = confusion(&[0, 0], &[1, 0], 2).unwrap();
        let pr = precision_recall(&none_predicted, 1);
        assert_eq!(pr.precision, 0.0);
        assert!(pr.precision_undefined && !pr.recall_undefined);

        let no_positives = confusion(&[1, 0], &[0, 0], 2).unwrap();
        let pr = precision_recall(&no_positives, 1);
        assert_eq!(pr.recall, 0.0);
        assert!(pr.recall_undefined);
        let report = MetricsReport::from_confusion(no_positives).unwrap();
        assert!(report.has_degenerate());
        assert!(report.render_table().contains('*'));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(0.5, 0.5), 0.5);
        assert!((f1(0.8, 2.0 / 3.0) - 0.727273).abs() < 1e-6);
        assert_eq!(f1(0.0, 0.9), 0.0);
        assert_eq!(f1(0.9, 0.0), 0.0);
    }

    #[test]
    fn symmetric_binary_macro_equals_class_f1() {
        let cm = ConfusionMatrix::from_binary(BinaryCounts { tp: 5, tn: 5, fp: 2, fn_: 2 });
        let pr = precision_recall(&cm, 1);
        assert_eq!(macro_f1(&cm), f1(pr.precision, pr.recall));
    }

    #[test]
    fn mismatched_lengths_and_range_are_errors() {
        assert!(confusion(&[0, 1], &[0], 2).is_err());
        assert!(confusion(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn csv_lists_every_count() {
        let r = MetricsReport::from_predictions(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        let csv = r.to_csv();
        assert!(csv.contains("count_0_1,1"));
        assert!(csv.contains("f1_averaging,binary"));
    }
}
