use super::BenchError;

/// Fraction of predictions equal to their label.
pub fn metric_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, BenchError> {
    if preds.len() != labels.len() {
        return Err(BenchError::Length {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(BenchError::Empty);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Area under the ROC curve by the rank statistic, ties at midrank.
///
/// Ranks are kept doubled so the statistic is an exact integer until the
/// final division.
pub fn metric_auc(scores: &[f64], labels: &[bool]) -> Result<f64, BenchError> {
    if scores.len() != labels.len() {
        return Err(BenchError::Length {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|l| **l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(BenchError::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(BenchError::NanScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // 1-based positions start+1..=end+1 share the midrank; doubled.
        let midrank2 = (start + 1 + end + 1) as u128;
        let pos_in_group = order[start..=end].iter().filter(|&&i| labels[i]).count() as u128;
        rank_sum2 += midrank2 * pos_in_group;
        start = end + 1;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise oracle: P(score_pos > score_neg) + 0.5 P(tie), doubled.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins2 = 0u128;
        let mut pairs = 0u128;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        wins2 += 2;
                    } else if scores[i] == scores[j] {
                        wins2 += 1;
                    }
                }
            }
        }
        wins2 as f64 / (2 * pairs) as f64
    }

    #[test]
    fn accuracy() {
        assert_eq!(metric_accuracy(&[0, 1, 1, 2], &[0, 1, 0, 2]).unwrap(), 0.75);
        assert!(metric_accuracy(&[], &[]).is_err());
        assert!(metric_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn perfect_and_inverted() {
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(metric_auc(&s, &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(metric_auc(&s, &[true, true, false, false]).unwrap(), 0.0);
        assert_eq!(
            metric_auc(&[1.0; 4], &[true, false, true, false]).unwrap(),
            0.5
        );
        assert!(metric_auc(&s, &[true; 4]).is_err());
    }

    #[test]
    fn rank_statistic_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 200;
            // Coarse scores force many ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..20) as f64 / 4.0)
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(
                metric_auc(&scores, &labels).unwrap(),
                brute_auc(&scores, &labels)
            );
        }
    }

    #[test]
    fn independent_labels_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let auc = metric_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 3.0 / (n as f64).sqrt(), "{auc}");
    }
}
