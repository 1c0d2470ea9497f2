//! Ranking quality of probabilistic predictions and training curves.

use std::fmt::Write as _;

pub const CURVE_HEADER: &str = "epoch,train_loss,eval_loss,eval_auc";

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// sharing their average rank. `None` when one class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group spans i..=j.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Mean binary cross-entropy of probabilities against labels.
pub fn log_loss(probs: &[f64], labels: &[bool]) -> f64 {
    const EPS: f64 = 1e-12;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_auc: Option<f64>,
}

impl EpochStats {
    pub fn csv(curve: &[EpochStats]) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{CURVE_HEADER}\n");
        for s in curve {
            let _ = writeln!(out, "{},{},{},{}", s.epoch, s.train_loss, opt(s.eval_loss), opt(s.eval_auc));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]), None);
        // Three of the four positive/negative pairs are ordered correctly.
        assert_eq!(roc_auc(&[0.2, 0.4, 0.3, 0.1], &[true, true, false, false]), Some(0.75));
    }

    #[test]
    fn log_loss_of_coin() {
        assert!((log_loss(&[0.5, 0.5], &[true, false]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn curve_csv_layout() {
        let csv = EpochStats::csv(&[EpochStats {
            epoch: 1,
            train_loss: 0.5,
            eval_loss: None,
            eval_auc: Some(0.75),
        }]);
        assert_eq!(csv, "epoch,train_loss,eval_loss,eval_auc\n1,0.5,,0.75\n");
    }
}
