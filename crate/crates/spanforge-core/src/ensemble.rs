//! Combine per-token probabilities or per-post span sets from any number of
//! models: at-least-m hard voting on character offsets, weighted soft voting
//! on aligned token probabilities, or a trained meta-classifier.
//!
//! Hard voting works on offsets, so models with different tokenizations can
//! be combined. Soft voting and the meta-classifier require identical token
//! extents across models and fail loudly when they differ; predictions are
//! never silently re-aligned.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::logistic;
use crate::metrics::{corpus_f1, EvalReport};
use crate::model::{FeatureVector, TrainConfig};
use crate::rng::SeededRng;
use crate::span::{self, LabelPolicy, SpanSet};

/// One model's per-token probabilities for one post, as
/// `(start, end, probability)` triples over character extents.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TokenPrediction {
    pub post_id: String,
    pub model_id: String,
    tokens: Vec<(usize, usize, f64)>,
}

impl TokenPrediction {
    /// Validates that extents are sorted, non-overlapping and well-formed,
    /// and that probabilities lie in [0, 1].
    pub fn new(
        post_id: String,
        model_id: String,
        tokens: Vec<(usize, usize, f64)>,
    ) -> Result<TokenPrediction, EnsembleError> {
        let mut prev_end = 0usize;
        for &(start, end, prob) in &tokens {
            if start >= end {
                return Err(EnsembleError::BadExtent { start, end });
            }
            if start < prev_end {
                return Err(EnsembleError::OverlappingExtents { at: start });
            }
            if !(0.0..=1.0).contains(&prob) {
                return Err(EnsembleError::ProbOutOfRange(prob));
            }
            prev_end = end;
        }
        Ok(TokenPrediction {
            post_id,
            model_id,
            tokens,
        })
    }

    pub fn tokens(&self) -> &[(usize, usize, f64)] {
        &self.tokens
    }

    pub fn extents(&self) -> Vec<(usize, usize)> {
        self.tokens.iter().map(|&(s, e, _)| (s, e)).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.tokens.iter().map(|&(_, _, p)| p).collect()
    }

    /// Decode this prediction alone into an offset set.
    pub fn decode(
        &self,
        text: &str,
        threshold: f64,
        gap_fill: bool,
    ) -> Result<SpanSet, EnsembleError> {
        Ok(span::assemble_spans(
            text,
            &self.extents(),
            &self.probs(),
            threshold,
            gap_fill,
        )?)
    }
}

/// Ensembling strategy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "lowercase")
)]
pub enum VoteStrategy {
    /// Keep an offset when at least `min_votes` models predict it.
    /// `min_votes = 1` is the spans union, `min_votes = #models` the
    /// intersection.
    Hard { min_votes: usize },
    /// Threshold the weighted mean of per-token probabilities. `None`
    /// weights are uniform.
    Soft { weights: Option<BTreeMap<String, f64>> },
    /// Threshold the output of a logistic meta-classifier over the
    /// per-model probabilities.
    Meta,
}

/// A strategy plus its decoding parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleConfig {
    pub strategy: VoteStrategy,
    pub threshold: f64,
    pub gap_fill: bool,
}

impl EnsembleConfig {
    /// Short human-readable label for strategy tables.
    pub fn label(&self) -> String {
        match &self.strategy {
            VoteStrategy::Hard { min_votes } => {
                format!("hard(m={min_votes}, t={})", self.threshold)
            }
            VoteStrategy::Soft { .. } => format!("soft(t={})", self.threshold),
            VoteStrategy::Meta => format!("meta(t={})", self.threshold),
        }
    }
}

/// Logistic stacker over base-model probabilities in a fixed model order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetaClassifier {
    weights: Vec<f64>,
    bias: f64,
    model_order: Vec<String>,
}

impl MetaClassifier {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn model_order(&self) -> &[String] {
        &self.model_order
    }

    pub fn weight_of(&self, model_id: &str) -> Option<f64> {
        self.model_order
            .iter()
            .position(|m| m == model_id)
            .map(|i| self.weights[i])
    }

    /// Combined per-token probabilities for one post's aligned predictions.
    pub fn combine(
        &self,
        preds: &BTreeMap<String, TokenPrediction>,
    ) -> Result<Vec<f64>, EnsembleError> {
        let extents = aligned_extents(preds)?;
        let mut out = Vec::with_capacity(extents.len());
        for i in 0..extents.len() {
            let pairs: Vec<(usize, f64)> = self
                .model_order
                .iter()
                .enumerate()
                .map(|(j, model_id)| {
                    let pred = preds.get(model_id).ok_or_else(|| {
                        EnsembleError::MissingModel {
                            model_id: model_id.clone(),
                        }
                    })?;
                    Ok((j, pred.tokens()[i].2))
                })
                .collect::<Result<_, EnsembleError>>()?;
            let fv = FeatureVector::from_pairs(pairs);
            out.push(logistic::predict_prob(&self.weights, self.bias, &fv));
        }
        Ok(out)
    }
}

/// Everything known about one hold-out post: its text and gold spans plus
/// one prediction per model.
#[derive(Debug, Clone)]
pub struct PostPredictions {
    pub post_id: String,
    pub text: String,
    pub gold: SpanSet,
    preds: BTreeMap<String, TokenPrediction>,
}

impl PostPredictions {
    pub fn new(
        post_id: String,
        text: String,
        gold: SpanSet,
        preds: BTreeMap<String, TokenPrediction>,
    ) -> Result<PostPredictions, EnsembleError> {
        if preds.is_empty() {
            return Err(EnsembleError::NoPredictions {
                post_id: post_id.clone(),
            });
        }
        for (model_id, pred) in &preds {
            if pred.post_id != post_id {
                return Err(EnsembleError::WrongPost {
                    model_id: model_id.clone(),
                    expected: post_id.clone(),
                    got: pred.post_id.clone(),
                });
            }
        }
        Ok(PostPredictions {
            post_id,
            text,
            gold,
            preds,
        })
    }

    pub fn preds(&self) -> &BTreeMap<String, TokenPrediction> {
        &self.preds
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.preds.keys().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleError {
    BadExtent { start: usize, end: usize },
    OverlappingExtents { at: usize },
    ProbOutOfRange(f64),
    NoModels,
    VoteCountOutOfRange { min_votes: usize, models: usize },
    TokenMisalignment { model_a: String, model_b: String },
    MissingWeight { model_id: String },
    NegativeWeight { model_id: String },
    ZeroWeightSum,
    MissingModel { model_id: String },
    NoPredictions { post_id: String },
    WrongPost { model_id: String, expected: String, got: String },
    InconsistentModels { post_id: String },
    EmptyHoldout,
    NoCandidates,
    BadGrid,
    MetaNotTrained,
    Train(crate::model::TrainError),
    Alignment(span::AlignmentError),
}

impl fmt::Display for EnsembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleError::BadExtent { start, end } => {
                write!(f, "token extent ({start}, {end}) is not a valid half-open range")
            }
            EnsembleError::OverlappingExtents { at } => {
                write!(f, "token extents overlap or are unsorted at offset {at}")
            }
            EnsembleError::ProbOutOfRange(p) => {
                write!(f, "probability {p} outside [0, 1]")
            }
            EnsembleError::NoModels => write!(f, "no model predictions given"),
            EnsembleError::VoteCountOutOfRange { min_votes, models } => {
                write!(f, "vote count {min_votes} outside 1..={models}")
            }
            EnsembleError::TokenMisalignment { model_a, model_b } => write!(
                f,
                "models {model_a:?} and {model_b:?} tokenize differently; \
                 soft voting and the meta-classifier need identical extents"
            ),
            EnsembleError::MissingWeight { model_id } => {
                write!(f, "no weight provided for model {model_id:?}")
            }
            EnsembleError::NegativeWeight { model_id } => {
                write!(f, "negative weight for model {model_id:?}")
            }
            EnsembleError::ZeroWeightSum => write!(f, "weights sum to zero"),
            EnsembleError::MissingModel { model_id } => {
                write!(f, "no prediction from model {model_id:?}")
            }
            EnsembleError::NoPredictions { post_id } => {
                write!(f, "post {post_id:?} has no predictions")
            }
            EnsembleError::WrongPost { model_id, expected, got } => write!(
                f,
                "model {model_id:?} prediction is for post {got:?}, expected {expected:?}"
            ),
            EnsembleError::InconsistentModels { post_id } => {
                write!(f, "post {post_id:?} is missing predictions from some models")
            }
            EnsembleError::EmptyHoldout => write!(f, "hold-out set is empty"),
            EnsembleError::NoCandidates => write!(f, "no candidate strategies"),
            EnsembleError::BadGrid => {
                write!(f, "threshold grid must be nonempty with values in [0, 1]")
            }
            EnsembleError::MetaNotTrained => {
                write!(f, "meta strategy selected but no meta-classifier is available")
            }
            EnsembleError::Train(e) => write!(f, "meta training failed: {e}"),
            EnsembleError::Alignment(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EnsembleError {}

impl From<span::AlignmentError> for EnsembleError {
    fn from(e: span::AlignmentError) -> Self {
        EnsembleError::Alignment(e)
    }
}

impl From<crate::model::TrainError> for EnsembleError {
    fn from(e: crate::model::TrainError) -> Self {
        EnsembleError::Train(e)
    }
}

/// Keep every offset predicted by at least `min_votes` models.
pub fn hard_vote(
    spans_by_model: &BTreeMap<String, SpanSet>,
    min_votes: usize,
) -> Result<SpanSet, EnsembleError> {
    let models = spans_by_model.len();
    if min_votes == 0 || min_votes > models {
        return Err(EnsembleError::VoteCountOutOfRange { min_votes, models });
    }
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for spans in spans_by_model.values() {
        for offset in spans.iter() {
            *votes.entry(offset).or_insert(0) += 1;
        }
    }
    Ok(votes
        .into_iter()
        .filter_map(|(offset, count)| (count >= min_votes).then_some(offset))
        .collect())
}

fn aligned_extents(
    preds: &BTreeMap<String, TokenPrediction>,
) -> Result<Vec<(usize, usize)>, EnsembleError> {
    let mut iter = preds.values();
    let first = iter.next().expect("preds validated nonempty");
    let extents = first.extents();
    for other in iter {
        if other.extents() != extents {
            return Err(EnsembleError::TokenMisalignment {
                model_a: first.model_id.clone(),
                model_b: other.model_id.clone(),
            });
        }
    }
    Ok(extents)
}

/// Weighted mean of per-token probabilities across models, thresholded into
/// an offset set. All predictions must share identical token extents and the
/// weights, when given, must cover every model.
pub fn soft_vote(
    text: &str,
    preds: &BTreeMap<String, TokenPrediction>,
    weights: Option<&BTreeMap<String, f64>>,
    threshold: f64,
    gap_fill: bool,
) -> Result<(Vec<f64>, SpanSet), EnsembleError> {
    if preds.is_empty() {
        return Err(EnsembleError::NoModels);
    }
    let extents = aligned_extents(preds)?;

    let mut weight_of: Vec<(f64, &TokenPrediction)> = Vec::with_capacity(preds.len());
    for (model_id, pred) in preds {
        let w = match weights {
            None => 1.0,
            Some(map) => *map.get(model_id).ok_or_else(|| EnsembleError::MissingWeight {
                model_id: model_id.clone(),
            })?,
        };
        if w < 0.0 {
            return Err(EnsembleError::NegativeWeight {
                model_id: model_id.clone(),
            });
        }
        weight_of.push((w, pred));
    }
    let weight_sum: f64 = weight_of.iter().map(|(w, _)| w).sum();
    if weight_sum <= 0.0 {
        return Err(EnsembleError::ZeroWeightSum);
    }

    let combined: Vec<f64> = (0..extents.len())
        .map(|i| {
            weight_of
                .iter()
                .map(|(w, pred)| w * pred.tokens()[i].2)
                .sum::<f64>()
                / weight_sum
        })
        .collect();
    let spans = span::assemble_spans(text, &extents, &combined, threshold, gap_fill)?;
    Ok((combined, spans))
}

fn check_consistent_models(posts: &[PostPredictions]) -> Result<Vec<String>, EnsembleError> {
    let model_ids: Vec<String> = posts[0].preds.keys().cloned().collect();
    for post in posts {
        let ids: Vec<&String> = post.preds.keys().collect();
        if ids.len() != model_ids.len() || ids.iter().zip(&model_ids).any(|(a, b)| *a != b) {
            return Err(EnsembleError::InconsistentModels {
                post_id: post.post_id.clone(),
            });
        }
    }
    Ok(model_ids)
}

/// Train a logistic meta-classifier on hold-out predictions. Token targets
/// come from projecting the gold spans under `policy`; the features of a
/// token are exactly the base-model probabilities in sorted model order.
pub fn train_meta(
    posts: &[PostPredictions],
    cfg: &TrainConfig,
    policy: LabelPolicy,
) -> Result<MetaClassifier, EnsembleError> {
    if posts.is_empty() {
        return Err(EnsembleError::EmptyHoldout);
    }
    cfg.validate()?;
    let model_order = check_consistent_models(posts)?;

    let mut examples: Vec<(FeatureVector, f64)> = Vec::new();
    for post in posts {
        let extents = aligned_extents(&post.preds)?;
        let labels = span::project_extents_to_labels(&extents, &post.gold, policy);
        for (i, &label) in labels.iter().enumerate() {
            let pairs: Vec<(usize, f64)> = model_order
                .iter()
                .enumerate()
                .map(|(j, model_id)| (j, post.preds[model_id].tokens()[i].2))
                .collect();
            examples.push((
                FeatureVector::from_pairs(pairs),
                if label { 1.0 } else { 0.0 },
            ));
        }
    }

    let mut rng = SeededRng::new(cfg.seed);
    let run = logistic::sgd_train(
        &examples,
        model_order.len(),
        cfg.learning_rate,
        cfg.l2,
        cfg.epochs,
        None,
        &mut rng,
        |_, _, _| {},
    );
    Ok(MetaClassifier {
        weights: run.weights,
        bias: run.bias,
        model_order,
    })
}

/// Per-token values for one post, ready for threshold sweeps.
#[derive(Debug, Clone)]
pub struct ScoredPost {
    pub post_id: String,
    pub text: String,
    pub extents: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub gold: SpanSet,
}

/// Decode at every grid threshold and return `(best threshold, best F1)`;
/// ties go to the smallest threshold.
pub fn sweep_threshold(
    posts: &[ScoredPost],
    grid: &[f64],
    gap_fill: bool,
) -> Result<(f64, f64), EnsembleError> {
    if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(EnsembleError::BadGrid);
    }
    if posts.is_empty() {
        return Err(EnsembleError::EmptyHoldout);
    }
    let mut thresholds: Vec<f64> = grid.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut best: Option<(f64, f64)> = None;
    for &threshold in &thresholds {
        let decoded: Vec<SpanSet> = posts
            .iter()
            .map(|p| span::assemble_spans(&p.text, &p.extents, &p.values, threshold, gap_fill))
            .collect::<Result<_, _>>()?;
        let report = corpus_f1(
            decoded
                .iter()
                .zip(posts)
                .map(|(pred, p)| (pred, &p.gold, p.post_id.as_str())),
        )
        .expect("posts is nonempty");
        let better = match best {
            Some((_, best_f1)) => report.mean_f1 > best_f1,
            None => true,
        };
        if better {
            best = Some((threshold, report.mean_f1));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Decode one post under a strategy. `meta` must be given for
/// [`VoteStrategy::Meta`].
pub fn apply_strategy(
    text: &str,
    preds: &BTreeMap<String, TokenPrediction>,
    cfg: &EnsembleConfig,
    meta: Option<&MetaClassifier>,
) -> Result<SpanSet, EnsembleError> {
    match &cfg.strategy {
        VoteStrategy::Hard { min_votes } => {
            let spans_by_model: BTreeMap<String, SpanSet> = preds
                .iter()
                .map(|(model_id, pred)| {
                    Ok((
                        model_id.clone(),
                        pred.decode(text, cfg.threshold, cfg.gap_fill)?,
                    ))
                })
                .collect::<Result<_, EnsembleError>>()?;
            hard_vote(&spans_by_model, *min_votes)
        }
        VoteStrategy::Soft { weights } => {
            let (_, spans) = soft_vote(text, preds, weights.as_ref(), cfg.threshold, cfg.gap_fill)?;
            Ok(spans)
        }
        VoteStrategy::Meta => {
            let meta = meta.ok_or(EnsembleError::MetaNotTrained)?;
            let combined = meta.combine(preds)?;
            let extents = aligned_extents(preds)?;
            Ok(span::assemble_spans(
                text,
                &extents,
                &combined,
                cfg.threshold,
                cfg.gap_fill,
            )?)
        }
    }
}

/// One evaluated candidate in a strategy selection.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StrategyRow {
    pub label: String,
    pub mean_f1: f64,
}

/// Outcome of [`select_strategy`].
#[derive(Debug, Clone)]
pub struct StrategySelection {
    pub config: EnsembleConfig,
    pub meta: Option<MetaClassifier>,
    pub report: EvalReport,
    pub table: Vec<StrategyRow>,
}

/// The default candidate list: hard voting at every vote count, soft voting
/// at the grid threshold that scores best on the hold-out, and the
/// meta-classifier.
pub fn default_candidates(
    posts: &[PostPredictions],
    threshold: f64,
    gap_fill: bool,
    grid: &[f64],
) -> Result<Vec<EnsembleConfig>, EnsembleError> {
    if posts.is_empty() {
        return Err(EnsembleError::EmptyHoldout);
    }
    let models = check_consistent_models(posts)?.len();
    let mut candidates = Vec::with_capacity(models + 2);
    for min_votes in 1..=models {
        candidates.push(EnsembleConfig {
            strategy: VoteStrategy::Hard { min_votes },
            threshold,
            gap_fill,
        });
    }

    let scored: Vec<ScoredPost> = posts
        .iter()
        .map(|post| {
            let (combined, _) = soft_vote(&post.text, &post.preds, None, threshold, gap_fill)?;
            Ok(ScoredPost {
                post_id: post.post_id.clone(),
                text: post.text.clone(),
                extents: aligned_extents(&post.preds)?,
                values: combined,
                gold: post.gold.clone(),
            })
        })
        .collect::<Result<_, EnsembleError>>()?;
    let (best_threshold, _) = sweep_threshold(&scored, grid, gap_fill)?;
    candidates.push(EnsembleConfig {
        strategy: VoteStrategy::Soft { weights: None },
        threshold: best_threshold,
        gap_fill,
    });

    candidates.push(EnsembleConfig {
        strategy: VoteStrategy::Meta,
        threshold,
        gap_fill,
    });
    Ok(candidates)
}

/// Evaluate every candidate on the hold-out and return the one with the
/// highest mean F1; ties go to the first candidate in list order.
pub fn select_strategy(
    posts: &[PostPredictions],
    candidates: &[EnsembleConfig],
    meta_cfg: &TrainConfig,
    policy: LabelPolicy,
) -> Result<StrategySelection, EnsembleError> {
    if posts.is_empty() {
        return Err(EnsembleError::EmptyHoldout);
    }
    if candidates.is_empty() {
        return Err(EnsembleError::NoCandidates);
    }
    check_consistent_models(posts)?;

    let needs_meta = candidates
        .iter()
        .any(|c| matches!(c.strategy, VoteStrategy::Meta));
    let meta = if needs_meta {
        Some(train_meta(posts, meta_cfg, policy)?)
    } else {
        None
    };

    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, EvalReport)> = None;
    for (idx, candidate) in candidates.iter().enumerate() {
        let decoded: Vec<SpanSet> = posts
            .iter()
            .map(|post| apply_strategy(&post.text, &post.preds, candidate, meta.as_ref()))
            .collect::<Result<_, _>>()?;
        let report = corpus_f1(
            decoded
                .iter()
                .zip(posts)
                .map(|(pred, post)| (pred, &post.gold, post.post_id.as_str())),
        )
        .expect("posts is nonempty");
        table.push(StrategyRow {
            label: candidate.label(),
            mean_f1: report.mean_f1,
        });
        let better = match &best {
            Some((_, best_report)) => report.mean_f1 > best_report.mean_f1,
            None => true,
        };
        if better {
            best = Some((idx, report));
        }
    }

    let (best_idx, report) = best.expect("candidates is nonempty");
    let config = candidates[best_idx].clone();
    let keep_meta = matches!(config.strategy, VoteStrategy::Meta);
    Ok(StrategySelection {
        config,
        meta: if keep_meta { meta } else { None },
        report,
        table,
    })
}
