//! Cohen's kappa, micro accuracy, macro F1 and the parent-level roll-up.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::labelspace::{Label, LabelSpace};

/// Square count matrix; rows index the true class, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(domain("confusion matrix must be square and non-empty"));
        }
        Ok(Self {
            k,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_predictions(k: usize, truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(domain(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::zeros(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: Label, predicted: Label) -> Result<()> {
        if truth.index() >= self.k || predicted.index() >= self.k {
            return Err(domain(format!(
                "pair ({}, {}) outside a {}-class matrix",
                truth.index(),
                predicted.index(),
                self.k
            )));
        }
        self.counts[truth.index() * self.k + predicted.index()] += 1;
        Ok(())
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|j| (0..self.k).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.k).all(|i| (0..self.k).all(|j| i == j || self.get(i, j) == 0))
    }
}

/// Chance-corrected agreement. Defined as 0 when the expected agreement is 1
/// and as 0 on an empty matrix.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let p_e = rows
        .iter()
        .zip(&cols)
        .map(|(&r, &c)| r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return 0.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

pub fn micro_accuracy(cm: &ConfusionMatrix) -> f64 {
    match cm.total() {
        0 => 0.0,
        total => cm.trace() as f64 / total as f64,
    }
}

/// Unweighted mean of per-class F1 over all `K` classes of the matrix.
/// Classes with an empty denominator contribute 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let sum: f64 = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let precision = ratio(tp, cols[c] as f64);
            let recall = ratio(tp, rows[c] as f64);
            ratio(2.0 * precision * recall, precision + recall)
        })
        .sum();
    sum / cm.num_classes() as f64
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Re-indexes a fine-level matrix by parent class on both axes.
pub fn rollup_confusion(cm: &ConfusionMatrix, space: &LabelSpace) -> Result<ConfusionMatrix> {
    if cm.num_classes() != space.num_classes() {
        return Err(domain(format!(
            "matrix has {} classes, label space {}",
            cm.num_classes(),
            space.num_classes()
        )));
    }
    let parents = space.parent_table();
    let mut out = ConfusionMatrix::zeros(space.num_parents());
    for i in 0..cm.num_classes() {
        for j in 0..cm.num_classes() {
            out.counts[parents[i] * out.k + parents[j]] += cm.get(i, j);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fine,
    Parent,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Fine => "fine",
            Level::Parent => "parent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kappa: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub level: Level,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, level: Level) -> Self {
        Self {
            kappa: cohen_kappa(cm),
            accuracy: micro_accuracy(cm),
            macro_f1: macro_f1(cm),
            level,
        }
    }

    /// Fine and parent reports for one prediction set.
    pub fn both_levels(cm: &ConfusionMatrix, space: &LabelSpace) -> Result<[MetricsReport; 2]> {
        let parent = rollup_confusion(cm, space)?;
        Ok([
            Self::from_confusion(cm, Level::Fine),
            Self::from_confusion(&parent, Level::Parent),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn diagonal_is_perfect() {
        let m = cm(&[&[5, 0, 0], &[0, 2, 0], &[0, 0, 9]]);
        assert_eq!(cohen_kappa(&m), 1.0);
        assert_eq!(micro_accuracy(&m), 1.0);
        assert_eq!(macro_f1(&m), 1.0);
    }

    #[test]
    fn all_ones_two_by_two_has_zero_kappa() {
        let m = cm(&[&[1, 1], &[1, 1]]);
        assert_eq!(cohen_kappa(&m), 0.0);
        assert_eq!(micro_accuracy(&m), 0.5);
    }

    #[test]
    fn single_class_slice_kappa_is_zero() {
        let m = cm(&[&[7, 0], &[0, 0]]);
        assert_eq!(cohen_kappa(&m), 0.0);
    }

    #[test]
    fn zero_diagonal_accuracy() {
        let m = cm(&[&[0, 3], &[4, 0]]);
        assert_eq!(micro_accuracy(&m), 0.0);
    }

    #[test]
    fn two_class_macro_f1_by_hand() {
        let m = cm(&[&[8, 2], &[3, 7]]);
        let expected = (16.0 / 21.0 + 14.0 / 19.0) / 2.0;
        assert!((macro_f1(&m) - expected).abs() < 1e-15);
        assert!((macro_f1(&m) - 0.74937).abs() < 1e-5);
    }

    #[test]
    fn absent_class_counts_as_zero_f1() {
        // class 2 never true, never predicted
        let m = cm(&[&[8, 2, 0], &[3, 7, 0], &[0, 0, 0]]);
        let expected = (16.0 / 21.0 + 14.0 / 19.0) / 3.0;
        assert!((macro_f1(&m) - expected).abs() < 1e-15);
    }

    #[test]
    fn rollup_merges_sibling_confusions() {
        let space =
            LabelSpace::new(vec!["a".into(), "b".into(), "c".into()], vec![0, 0, 1], 2).unwrap();
        let m = cm(&[&[1, 4, 0], &[3, 2, 1], &[0, 2, 5]]);
        let p = rollup_confusion(&m, &space).unwrap();
        assert_eq!(p, cm(&[&[10, 1], &[2, 5]]));
        let identity = LabelSpace::identity(3).unwrap();
        assert_eq!(rollup_confusion(&m, &identity).unwrap(), m);
    }

    proptest! {
        #[test]
        fn simultaneous_permutation_invariance(
            cells in proptest::collection::vec(0u64..20, 16),
            rot in 0usize..4,
        ) {
            prop_assume!(cells.iter().any(|&c| c > 0));
            let rows: Vec<Vec<u64>> = cells.chunks(4).map(|c| c.to_vec()).collect();
            let m = ConfusionMatrix::from_rows(&rows).unwrap();
            let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
            let permuted: Vec<Vec<u64>> = (0..4)
                .map(|i| (0..4).map(|j| rows[perm[i]][perm[j]]).collect())
                .collect();
            let p = ConfusionMatrix::from_rows(&permuted).unwrap();
            prop_assert!((cohen_kappa(&m) - cohen_kappa(&p)).abs() < 1e-12);
            prop_assert!((micro_accuracy(&m) - micro_accuracy(&p)).abs() < 1e-12);
            prop_assert!((macro_f1(&m) - macro_f1(&p)).abs() < 1e-12);
        }

        #[test]
        fn kappa_one_iff_diagonal(cells in proptest::collection::vec(0u64..5, 9)) {
            prop_assume!(cells.iter().any(|&c| c > 0));
            let rows: Vec<Vec<u64>> = cells.chunks(3).map(|c| c.to_vec()).collect();
            let m = ConfusionMatrix::from_rows(&rows).unwrap();
            let k = cohen_kappa(&m);
            // a diagonal matrix with one populated class has p_e = 1, so kappa is 0 there
            let informative = m.row_sums().iter().filter(|&&r| r > 0).count() > 1;
            prop_assert_eq!(k == 1.0, m.is_diagonal() && informative);
            prop_assert!((-1.0..=1.0).contains(&k));
        }
    }
}
