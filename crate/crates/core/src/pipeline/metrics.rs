//! Binary classification metrics with the nonconforming class as positive.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Precision and the flag raised when it had to be defined by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    pub value: f64,
    pub undefined: bool,
}

impl Confusion {
    /// Counts with `positive` as the positive class.
    pub fn from_predictions(predicted: &[usize], truth: &[usize], positive: usize) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p == positive, t == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// With no positive predictions precision is 1 when there were no positives
    /// to find and 0 (flagged) otherwise.
    pub fn precision(&self) -> Precision {
        match self.tp + self.fp {
            0 if self.fn_ == 0 => Precision { value: 1.0, undefined: false },
            0 => Precision { value: 0.0, undefined: true },
            d => Precision { value: self.tp as f64 / d as f64, undefined: false },
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 1.0,
            d => self.tp as f64 / d as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision().value;
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Unweighted mean of the per-class F1 scores over `classes` classes.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    (0..classes).map(|k| Confusion::from_predictions(predicted, truth, k).f1()).sum::<f64>() / classes as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_agreement_scores_one() {
        let c = Confusion::from_predictions(&[0, 0, 0], &[0, 0, 0], 1);
        assert_eq!(c.accuracy(), 1.0);
        assert_eq!(c.precision(), Precision { value: 1.0, undefined: false });
        assert_eq!(c.f1(), 1.0);
    }

    #[test]
    fn no_positive_predictions_is_flagged_zero() {
        let c = Confusion::from_predictions(&[0, 0, 0, 0], &[1, 0, 1, 0], 1);
        assert_eq!(c.precision(), Precision { value: 0.0, undefined: true });
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.accuracy(), 0.5);
    }

    #[test]
    fn hand_counted_confusion() {
        let c = Confusion::from_predictions(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1], 1);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
        assert!((c.precision().value - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_averages_both_classes() {
        // class 1: p = 1, r = 0.5 -> 2/3; class 0: p = 2/3, r = 1 -> 0.8
        let m = macro_f1(&[1, 0, 0, 0], &[1, 1, 0, 0], 2);
        assert!((m - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }
}
