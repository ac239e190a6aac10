//! Per-post precision/recall/F1 over character-offset sets, the corpus
//! average, and rank-based ROC-AUC.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::span::SpanSet;

/// Precision, recall and F1 for a single post.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PostScore {
    pub post_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-post scores together with their unweighted mean F1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_post: Vec<PostScore>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    EmptyCorpus,
    LengthMismatch { scores: usize, labels: usize },
    SingleClass,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyCorpus => write!(f, "cannot score an empty corpus"),
            MetricsError::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores but {labels} labels")
            }
            MetricsError::SingleClass => {
                write!(f, "both classes must be present")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Precision, recall and F1 of a predicted offset set against gold.
///
/// The set formulas are undefined when a side is empty, so the scorer's
/// conventions apply: both sets empty scores (1, 1, 1), exactly one empty
/// scores (0, 0, 0).
pub fn per_post_prf(pred: &SpanSet, gold: &SpanSet) -> (f64, f64, f64) {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => (1.0, 1.0, 1.0),
        (true, false) | (false, true) => (0.0, 0.0, 0.0),
        (false, false) => {
            let intersection = pred.intersection_count(gold) as f64;
            let precision = intersection / pred.len() as f64;
            let recall = intersection / gold.len() as f64;
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (precision, recall, f1)
        }
    }
}

/// Score every `(pred, gold, post_id)` triple and average the F1 over posts.
/// The mean is unweighted: every post counts once, whatever its length.
pub fn corpus_f1<'a, I>(pairs: I) -> Result<EvalReport, MetricsError>
where
    I: IntoIterator<Item = (&'a SpanSet, &'a SpanSet, &'a str)>,
{
    let per_post: Vec<PostScore> = pairs
        .into_iter()
        .map(|(pred, gold, post_id)| {
            let (precision, recall, f1) = per_post_prf(pred, gold);
            PostScore {
                post_id: String::from(post_id),
                precision,
                recall,
                f1,
            }
        })
        .collect();
    if per_post.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mean_f1 = per_post.iter().map(|s| s.f1).sum::<f64>() / per_post.len() as f64;
    Ok(EvalReport { per_post, mean_f1 })
}

/// Probability that a uniformly random positive outranks a uniformly random
/// negative; ties count one half. Computed by rank sum with average ranks
/// over tied scores, O(n log n) and exact.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        // tied block occupies 1-based ranks i+1 ..= j
        let average_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                positive_rank_sum += average_rank;
            }
        }
        i = j;
    }

    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}
