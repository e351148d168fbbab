use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::synth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of a selected feature set against the planted support.
///
/// An empty selection has precision 1; an empty truth has recall 1. F1 is 0
/// whenever precision + recall is 0.
pub fn support_metrics(selected: &[usize], truth: &GroundTruth) -> SupportMetrics {
    let selected: BTreeSet<usize> = selected.iter().copied().collect();
    let support: BTreeSet<usize> = truth.support.iter().copied().collect();
    let hits = selected.intersection(&support).count() as f64;
    let precision = if selected.is_empty() {
        1.0
    } else {
        hits / selected.len() as f64
    };
    let recall = if support.is_empty() {
        1.0
    } else {
        hits / support.len() as f64
    };
    let f1 = if precision + recall == 0.0 || (selected.is_empty() && !support.is_empty()) {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SupportMetrics {
        precision,
        recall,
        f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn truth(support: Vec<usize>) -> GroundTruth {
        GroundTruth {
            g_true: Array1::zeros(1),
            s_true: Array1::zeros(6),
            beta_true: Array1::zeros(6),
            support,
        }
    }

    #[test]
    fn exact_recovery() {
        let m = support_metrics(&[1, 3], &truth(vec![1, 3]));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn complement() {
        let m = support_metrics(&[0, 2, 4, 5], &truth(vec![1, 3]));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_recall() {
        let m = support_metrics(&[1], &truth(vec![1, 3]));
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_selection_convention() {
        let m = support_metrics(&[], &truth(vec![1, 3]));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 0.0, 0.0));
    }
}
