//! Ranking and calibration metrics for binary CTR predictions.

use crate::error::{Error, Result};

/// Probability that a uniformly random positive outranks a uniformly random
/// negative, counting ties as one half (average-rank formulation).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|l| **l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks within tie groups, 1-based
    let mut rank_sum_positive = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_positive += avg_rank;
            }
        }
        i = j + 1;
    }

    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_positive - np * (np + 1.0) / 2.0) / (np * nn))
}

const CLIP: f64 = 1e-7;

/// Mean binary cross-entropy with scores clipped to `[1e-7, 1 − 1e-7]`.
pub fn log_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Metric("log loss of an empty sample set is undefined".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (s, l) in scores.iter().zip(labels) {
        if *l > 1 {
            return Err(Error::Metric("labels must be 0 or 1".into()));
        }
        let p = s.clamp(CLIP, 1.0 - CLIP);
        total -= if *l == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_rankings() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_give_one_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [1, 0, 1, 0];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(auc(&[0.1, 0.9], &[1, 1]).is_err());
        assert!(auc(&[0.1, 0.9], &[0, 0]).is_err());
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.65];
        let labels = [0, 0, 1, 1, 0];
        let base = auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 3.0).exp() + 7.0).collect();
        let shifted = auc(&transformed, &labels).unwrap();
        assert!((base - shifted).abs() <= 1e-12);
    }

    #[test]
    fn constant_half_predictor_scores_ln_two() {
        let loss = log_loss(&[0.5, 0.5], &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() <= 1e-12);
    }

    #[test]
    fn exact_predictions_hit_the_clip_floor() {
        let loss = log_loss(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(loss <= 1e-6, "clipped loss was {loss}");
    }

    #[test]
    fn hand_computed_value() {
        let loss = log_loss(&[0.8, 0.2], &[1, 0]).unwrap();
        let expected = -(0.8f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((loss - expected).abs() <= 1e-9);
        assert!((loss - 0.223144).abs() <= 1e-6);
    }

    #[test]
    fn empty_input_is_undefined() {
        assert!(log_loss(&[], &[]).is_err());
    }
}
