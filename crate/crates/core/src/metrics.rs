//! Evaluation metrics: accuracy, misclassification cost, normalized entropy
//! AUC and uncertainty ROC / precision-recall AUC.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{EdlError, Result};
use crate::risk::RiskMatrix;

fn check_pairs(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(EdlError::InvalidArgument("no predictions to score".into()));
    }
    if preds.len() != labels.len() {
        return Err(EdlError::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean of `R[label][pred]`.
pub fn avg_cost(preds: &[usize], labels: &[usize], risk: &RiskMatrix) -> Result<f64> {
    check_pairs(preds, labels)?;
    let k = risk.k();
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= k) {
        return Err(EdlError::IndexOutOfRange { index: bad, len: k });
    }
    let total: f64 = preds.iter().zip(labels).map(|(&p, &y)| risk.cost(y, p)).sum();
    Ok(total / preds.len() as f64)
}

/// Area under the empirical entropy CDF on `[0, ln K]`, divided by `ln K`:
/// `1 − mean(H) / ln K`.
pub fn norm_entropy_auc(entropies: &[f64], k: usize) -> Result<f64> {
    if entropies.is_empty() || k < 2 {
        return Err(EdlError::InvalidArgument("entropy AUC needs samples and K ≥ 2".into()));
    }
    let max = (k as f64).ln();
    if let Some(bad) = entropies.iter().find(|h| !(**h >= -1e-12 && **h <= max + 1e-12)) {
        return Err(EdlError::InvalidArgument(format!(
            "entropy {bad} outside [0, ln {k}]"
        )));
    }
    let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
    Ok((1.0 - mean / max).clamp(0.0, 1.0))
}

/// ROC AUC of `scores` for separating `positive` samples from the rest, by the
/// Mann–Whitney rank statistic with averaged ranks on ties.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, positive)?;
    let order = sorted_order(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&o| positive[o]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: precision at each distinct threshold, weighted by the
/// recall gained there. Tied scores enter together.
pub fn pr_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, positive)?;
    let mut order = sorted_order(scores);
    order.reverse();
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let gained = order[i..=j].iter().filter(|&&o| positive[o]).count();
        tp += gained;
        seen += j - i + 1;
        ap += (gained as f64 / pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Ok(ap)
}

/// `(roc_auc, pr_auc)` with correct predictions as positives scored by
/// `−uncertainty`, so confident-and-correct ranks high.
pub fn roc_pr_auc(uncertainty: &[f64], correct: &[bool]) -> Result<(f64, f64)> {
    let scores: Vec<f64> = uncertainty.iter().map(|u| -u).collect();
    Ok((roc_auc(&scores, correct)?, pr_auc(&scores, correct)?))
}

fn class_counts(scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(EdlError::InvalidArgument(format!(
            "{} scores for {} flags",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EdlError::NonFinite("score".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EdlError::InvalidArgument(
            "ROC/PR AUC needs both positive and negative samples".into(),
        ));
    }
    Ok((pos, neg))
}

fn sorted_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// One evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub label: usize,
    pub pred: usize,
    pub entropy: f64,
    /// `R[label][pred]` when a risk matrix was supplied.
    pub cost: Option<f64>,
}

impl SampleRecord {
    pub fn correct(&self) -> bool {
        self.label == self.pred
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAuc {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub incorrect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<f64>,
}

/// Uncertainty discrimination between correct and incorrect predictions.
/// `roc_auc`/`pr_auc` score correctness by `−entropy`; the `_raw` pair keeps
/// `+entropy` as the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrimination {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub roc_auc_raw: f64,
    pub pr_auc_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub classes: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_cost: Option<f64>,
    pub mean_entropy: f64,
    pub entropy_auc: EntropyAuc,
    /// Absent when every prediction is correct or every one is wrong.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Discrimination>,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn build(
        labels: &[usize],
        preds: &[usize],
        entropies: &[f64],
        classes: usize,
        risk: Option<&RiskMatrix>,
        ood_entropies: Option<&[f64]>,
    ) -> Result<Self> {
        check_pairs(preds, labels)?;
        if entropies.len() != preds.len() {
            return Err(EdlError::InvalidArgument("one entropy per prediction required".into()));
        }
        let accuracy = accuracy(preds, labels)?;
        let avg_cost = risk.map(|r| avg_cost(preds, labels, r)).transpose()?;
        let records: Vec<SampleRecord> = (0..preds.len())
            .map(|i| SampleRecord {
                label: labels[i],
                pred: preds[i],
                entropy: entropies[i],
                cost: risk.map(|r| r.cost(labels[i], preds[i])),
            })
            .collect();
        let correct: Vec<bool> = records.iter().map(SampleRecord::correct).collect();
        let subset = |want: bool| -> Result<Option<f64>> {
            let hs: Vec<f64> = records
                .iter()
                .filter(|r| r.correct() == want)
                .map(|r| r.entropy)
                .collect();
            if hs.is_empty() {
                Ok(None)
            } else {
                norm_entropy_auc(&hs, classes).map(Some)
            }
        };
        let entropy_auc = EntropyAuc {
            correct: subset(true)?,
            incorrect: subset(false)?,
            ood: ood_entropies.map(|h| norm_entropy_auc(h, classes)).transpose()?,
        };
        let uncertainty = if correct.iter().all(|&c| c) || correct.iter().all(|&c| !c) {
            None
        } else {
            let (roc, pr) = roc_pr_auc(entropies, &correct)?;
            Some(Discrimination {
                roc_auc: roc,
                pr_auc: pr,
                roc_auc_raw: roc_auc(entropies, &correct)?,
                pr_auc_raw: pr_auc(entropies, &correct)?,
            })
        };
        Ok(Self {
            samples: preds.len(),
            classes,
            accuracy,
            avg_cost,
            mean_entropy: entropies.iter().sum::<f64>() / entropies.len() as f64,
            entropy_auc,
            uncertainty,
            records,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Per-sample CSV with header `index,label,pred,entropy,cost,correct`;
    /// `cost` is empty without a risk matrix.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("index,label,pred,entropy,cost,correct\n");
        for (i, r) in self.records.iter().enumerate() {
            let cost = r.cost.map(|c| format!("{c:?}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{i},{},{},{:?},{cost},{}",
                r.label,
                r.pred,
                r.entropy,
                u8::from(r.correct())
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn avg_cost_examples() {
        let r = RiskMatrix::mnist(10).unwrap();
        assert_eq!(avg_cost(&[0, 5], &[0, 5], &r).unwrap(), 0.0);
        assert_eq!(avg_cost(&[5, 0], &[0, 5], &r).unwrap(), 15.0);
        assert!(avg_cost(&[], &[], &r).is_err());
    }

    #[test]
    fn entropy_auc_extremes() {
        let k = 4;
        let max = (k as f64).ln();
        assert_eq!(norm_entropy_auc(&[0.0; 5], k).unwrap(), 1.0);
        assert!(norm_entropy_auc(&[max; 5], k).unwrap().abs() < 1e-15);
        assert!(norm_entropy_auc(&[max + 0.1], k).is_err());
        assert!(norm_entropy_auc(&[-0.1], k).is_err());
    }

    #[test]
    fn roc_orientation() {
        let entropy = [0.1, 0.2, 0.3, 0.8, 0.9];
        let correct = [true, true, true, false, false];
        let (roc, pr) = roc_pr_auc(&entropy, &correct).unwrap();
        assert_eq!(roc, 1.0);
        assert_eq!(pr, 1.0);
        assert_eq!(roc_auc(&entropy, &correct).unwrap(), 0.0);
        assert!(roc_pr_auc(&entropy, &[true; 5]).is_err());
    }

    #[test]
    fn roc_ties_match_pair_counting() {
        let scores = [0.3, 0.9, 0.1, 0.5, 0.5, 0.7, 0.2, 0.8, 0.4, 0.6];
        let pos = [false, true, false, true, false, true, false, false, true, true];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((roc_auc(&scores, &pos).unwrap() - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn average_precision_by_hand() {
        // ranking: +, -, +, -  → AP = ½(1/1) + ½(2/3)
        let scores = [4.0, 3.0, 2.0, 1.0];
        let pos = [true, false, true, false];
        assert!((pr_auc(&scores, &pos).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn report_omits_missing_sections() {
        let r = RiskMatrix::mnist(3).unwrap();
        let labels = [0, 1, 2, 1];
        let preds = [0, 1, 1, 1];
        let h = [0.1, 0.2, 0.9, 0.3];
        let plain = EvalReport::build(&labels, &preds, &h, 3, None, None).unwrap();
        let json: serde_json::Value = serde_json::from_str(&plain.to_json()).unwrap();
        assert!(json.get("avg_cost").is_none());
        assert!(json["entropy_auc"].get("ood").is_none());
        assert_eq!(json["accuracy"], 0.75);

        let full = EvalReport::build(&labels, &preds, &h, 3, Some(&r), Some(&[1.0, 1.05])).unwrap();
        let json: serde_json::Value = serde_json::from_str(&full.to_json()).unwrap();
        assert_eq!(json["avg_cost"], 0.25);
        assert!(json["entropy_auc"]["ood"].is_number());
        assert_eq!(json["uncertainty"]["roc_auc"], 1.0);

        let csv = full.records_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("index,label,pred,entropy,cost,correct"));
        assert_eq!(lines.nth(2), Some("2,2,1,0.9,1.0,0"));
    }
}
