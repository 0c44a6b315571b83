use serde::{Deserialize, Serialize};

use super::EvalError;

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.n_classes()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { expected: truth.len(), got: predicted.len() });
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(EvalError::ClassOutOfRange { class: t.max(p), n_classes });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus macro precision, recall and F1. Zero denominators give 0;
/// F1 is computed per class and then averaged.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let n = cm.n_classes();
    let per_class_precision: Vec<f64> = (0..n).map(|i| ratio(cm.counts[i][i], cols[i])).collect();
    let per_class_recall: Vec<f64> = (0..n).map(|i| ratio(cm.counts[i][i], rows[i])).collect();
    let per_class_f1: Vec<f64> = per_class_precision
        .iter()
        .zip(&per_class_recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    Ok(ClassificationMetrics {
        accuracy: ratio(cm.trace(), total),
        precision: mean(&per_class_precision),
        recall: mean(&per_class_recall),
        f1: mean(&per_class_f1),
        per_class_precision,
        per_class_recall,
        per_class_f1,
    })
}

/// Mid-ranks (1-based) with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Binary AUC via the rank-sum statistic; ties earn half credit.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC per class, macro-averaged over classes present in `labels`.
pub fn roc_auc_ovr<S: AsRef<[f64]>>(scores: &[S], labels: &[usize]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { expected: labels.len(), got: scores.len() });
    }
    let n_classes = scores.first().map_or(0, |s| s.as_ref().len());
    if scores.iter().any(|s| s.as_ref().len() != n_classes || s.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(EvalError::SingleClassInput);
    }
    if let Some(&c) = present.iter().find(|&&c| c >= n_classes) {
        return Err(EvalError::ClassOutOfRange { class: c, n_classes });
    }
    let mut total = 0.0;
    for &c in &present {
        let column: Vec<f64> = scores.iter().map(|s| s.as_ref()[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += binary_auc(&column, &positive).ok_or(EvalError::SingleClassInput)?;
    }
    Ok(total / present.len() as f64)
}

/// Running mean and sample standard deviation (Welford).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let std = if values.len() > 1 { (m2 / (values.len() - 1) as f64).sqrt() } else { 0.0 };
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise_auc(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        let mut sum = 0.0;
        for &c in &present {
            let (mut credit, mut pairs) = (0.0, 0.0);
            for (i, si) in scores.iter().enumerate() {
                if labels[i] != c {
                    continue;
                }
                for (j, sj) in scores.iter().enumerate() {
                    if labels[j] == c {
                        continue;
                    }
                    pairs += 1.0;
                    if si[c] > sj[c] {
                        credit += 1.0;
                    } else if si[c] == sj[c] {
                        credit += 0.5;
                    }
                }
            }
            sum += credit / pairs;
        }
        sum / present.len() as f64
    }

    #[test]
    fn six_pair_tally() {
        let cm = confusion_matrix(&[0, 0, 1, 2, 3, 3], &[0, 1, 1, 2, 3, 0], 4).unwrap();
        let want = vec![vec![1, 1, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![1, 0, 0, 1]];
        assert_eq!(cm.counts, want);
        assert_eq!(cm.row_sums(), vec![2, 1, 1, 2]);
        assert_eq!(
            confusion_matrix(&[0], &[0, 1], 4).unwrap_err(),
            EvalError::LengthMismatch { expected: 1, got: 2 }
        );
    }

    #[test]
    fn hand_metrics() {
        let cm = ConfusionMatrix { counts: vec![vec![8, 2], vec![3, 7]] };
        let m = classification_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class_precision[0], 8.0 / 11.0);
        assert_eq!(m.per_class_recall[1], 0.7);
        let p1 = 7.0 / 9.0;
        let f0 = 2.0 * (8.0 / 11.0) * 0.8 / (8.0 / 11.0 + 0.8);
        let f1 = 2.0 * p1 * 0.7 / (p1 + 0.7);
        assert!((m.f1 - (f0 + f1) / 2.0).abs() < 1e-15);

        let diag = ConfusionMatrix { counts: vec![vec![3, 0, 0, 0], vec![0, 2, 0, 0], vec![0, 0, 5, 0], vec![0, 0, 0, 1]] };
        let m = classification_metrics(&diag).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));

        let absent = ConfusionMatrix { counts: vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 0]] };
        let m = classification_metrics(&absent).unwrap();
        assert_eq!(m.per_class_recall[2], 0.0);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(classification_metrics(&ConfusionMatrix::zeros(4)).unwrap_err(), EvalError::EmptyMatrix);
    }

    #[test]
    fn auc_edges() {
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.1, 0.9], vec![0.2, 0.8]];
        assert_eq!(roc_auc_ovr(&scores, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc_ovr(&scores, &[0, 0, 0, 0]).unwrap_err(), EvalError::SingleClassInput);
        let mut rng = seeded(3);
        let n = 20_000;
        let s: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let l: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let auc = roc_auc_ovr(&s, &l).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "{auc}");
    }

    #[test]
    fn welford_matches_two_pass() {
        let v = [0.91, 0.93, 0.88, 0.95, 0.90];
        let m = v.iter().sum::<f64>() / 5.0;
        let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
        let (wm, ws) = mean_std(&v);
        assert!((wm - m).abs() < 1e-15 && (ws - s).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7, 0.7]), (0.7, 0.0));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(seed in 0u64..1000, n in 2usize..120, levels in 2u32..12) {
            let mut rng = seeded(seed);
            // Coarse score levels force ties.
            let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(0..levels) as f64).collect()).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let got = roc_auc_ovr(&scores, &labels).unwrap();
            prop_assert!((got - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn metrics_permutation_invariant(seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let n = 200;
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            let t2: Vec<usize> = idx.iter().map(|&i| t[i]).collect();
            let p2: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let a = classification_metrics(&confusion_matrix(&t, &p, 4).unwrap()).unwrap();
            let b = classification_metrics(&confusion_matrix(&t2, &p2, 4).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
