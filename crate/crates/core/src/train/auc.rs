use std::cmp::Ordering;

use super::TrainError;

/// Area under the ROC curve via the Mann-Whitney rank statistic.
///
/// Equals the fraction of (positive, negative) pairs in which the positive
/// scores higher, counting ties as one half. Runs in `O(n log n)`.
pub fn auc<T: Copy + PartialOrd>(scores: &[T], labels: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::SingleClass("auc"));
    }
    if scores.iter().any(|s| s.partial_cmp(s).is_none()) {
        return Err(TrainError::NanScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // sum of 1-based ranks of the positives, ties sharing their average rank
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi && !yj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn worked_cases() {
        assert_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(),
            0.5
        );
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.9, 0.6], &[true, false, true]).unwrap(), 0.0);
        assert_eq!(
            auc(&[0.4, 0.3, 0.6, 0.5], &[true, false, false, true]).unwrap(),
            0.5
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(TrainError::SingleClass(_))
        ));
        assert!(matches!(
            auc(&[f64::NAN, 0.2], &[true, false]),
            Err(TrainError::NanScore)
        ));
        assert!(auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn integer_scores_work() {
        assert_eq!(
            auc(&[1u8, 2, 2, 3], &[false, true, false, true]).unwrap(),
            0.875
        );
    }

    proptest! {
        #[test]
        fn matches_pair_counting(data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pair_count(&scores, &labels));
        }

        #[test]
        fn invariant_under_increasing_transform(data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| s).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let moved: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&moved, &labels).unwrap());
        }
    }
}
