//! Binary classification metrics with signal as the positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("AUC undefined: test set contains only one class")]
    SingleClass,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty evaluation set")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub n_events: u64,
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half.
///
/// Computed from exact integer pair counts, so the result is bit-identical to
/// brute-force pair enumeration.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != positive.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: positive.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let (mut wins, mut ties, mut neg_below) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins += pos_here * neg_below;
        ties += pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok((2 * wins + ties) as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// Full report; predictions are `score >= threshold`.
pub fn evaluate_scores(
    scores: &[f64],
    positive: &[bool],
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let auc = auc(scores, positive)?;
    let mut c = Confusion::default();
    for (&s, &p) in scores.iter().zip(positive) {
        match (s >= threshold, p) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(MetricsReport {
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        auc,
        confusion: c,
        n_events: c.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute_force_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let (mut wins, mut ties, mut pairs) = (0u128, 0u128, 0u128);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if positive[i] && !positive[j] {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        wins += 1;
                    } else if scores[i] == scores[j] {
                        ties += 1;
                    }
                }
            }
        }
        (2 * wins + ties) as f64 / (2 * pairs) as f64
    }

    #[test]
    fn perfect_and_tied_scores() {
        let labels = [true, true, false, false];
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
        let r = evaluate_scores(&[0.9, 0.8, 0.2, 0.1], &labels, 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn matches_pairwise_counting_on_random_sets() {
        let mut rng = crate::seeded_rng(17);
        for _ in 0..50 {
            let scores: Vec<f64> = (0..50).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
            let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0 || rng.random::<bool>()).collect();
            if labels.iter().all(|&l| l) {
                continue;
            }
            assert_eq!(auc(&scores, &labels).unwrap(), brute_force_auc(&scores, &labels));
        }
    }

    proptest! {
        #[test]
        fn confusion_identities(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let c = Confusion { tp, fp, tn, fn_ };
            prop_assert!((c.accuracy() - (tp + tn) as f64 / (tp + fp + tn + fn_) as f64).abs() < 1e-15);
            if tp + fp > 0 {
                prop_assert!((c.precision() - tp as f64 / (tp + fp) as f64).abs() < 1e-15);
            }
            if tp + fn_ > 0 {
                prop_assert!((c.recall() - tp as f64 / (tp + fn_) as f64).abs() < 1e-15);
            }
            let (p, r) = (c.precision(), c.recall());
            if p + r > 0.0 {
                prop_assert!((c.f1() - 2.0 * p * r / (p + r)).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&c.f1()));
        }
    }
}
