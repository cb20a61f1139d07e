//! Small evaluation utilities for comparing recovered states with ground
//! truth.

use std::collections::BTreeMap;

/// Adjusted Rand index between two labelings of the same items.
///
/// 1.0 means identical partitions (up to relabeling), 0.0 is the chance
/// level. Label values are arbitrary ids.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let mut cont: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b.iter()) {
        *cont.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    fn choose2(k: u64) -> f64 {
        (k as f64) * (k as f64 - 1.0) / 2.0
    }
    let sum_ij: f64 = cont.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// Ground-truth label of a half-open index range `[start, end)` of a truth
/// sequence: the constant label if the range is uniform, `None` for mixed
/// ranges (for example windows straddling a regime change).
pub fn range_label(truth: &[usize], start: usize, end: usize) -> Option<usize> {
    if start >= end || end > truth.len() {
        return None;
    }
    let first = truth[start];
    truth[start..end]
        .iter()
        .all(|&l| l == first)
        .then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions_score_one() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        // Relabeled but identical partition.
        let b = vec![7, 7, 3, 3, 9, 9];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_partitions_score_near_zero() {
        // Large independent random labelings sit at the chance level.
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let a: Vec<usize> = (0..10_000).map(|_| (next() % 4) as usize).collect();
        let b: Vec<usize> = (0..10_000).map(|_| (next() % 4) as usize).collect();
        assert!(adjusted_rand_index(&a, &b).abs() < 0.02);
    }

    #[test]
    fn hand_checked_partial_agreement() {
        // a = {0,0},{1,1}; b = {0,0},{1},{2}: ARI = 4/7.
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 0, 1, 2];
        assert!((adjusted_rand_index(&a, &b) - 4.0 / 7.0).abs() < 1e-12);
        // Anti-correlated 2x2 crossing scores below chance.
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        assert!((adjusted_rand_index(&a, &b) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn range_label_detects_mixed_windows() {
        let truth = vec![0, 0, 0, 1, 1, 1];
        assert_eq!(range_label(&truth, 0, 3), Some(0));
        assert_eq!(range_label(&truth, 3, 6), Some(1));
        assert_eq!(range_label(&truth, 2, 4), None);
        assert_eq!(range_label(&truth, 4, 4), None);
        assert_eq!(range_label(&truth, 0, 7), None);
    }
}
