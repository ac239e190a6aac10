//! Corpus records and the pure corpus operations: gold-span field parsing,
//! leakage removal, pretraining subset construction and split planning.
//!
//! File loading lives in the companion crate; everything here is a pure
//! function of its inputs and a seed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::rng::SeededRng;
use crate::span::SpanSet;

/// One comment: identifier, raw text and (when annotated) the gold offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    id: String,
    text: String,
    gold: Option<SpanSet>,
    char_len: usize,
}

impl Post {
    /// Validates that every gold offset indexes a character of `text`.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold: Option<SpanSet>,
    ) -> Result<Post, CorpusError> {
        let id = id.into();
        let text = text.into();
        let char_len = text.chars().count();
        if let Some(gold) = &gold {
            if let Some(max) = gold.max() {
                if max >= char_len {
                    return Err(CorpusError::OffsetOutOfRange {
                        offset: max,
                        text_chars: char_len,
                    });
                }
            }
        }
        Ok(Post {
            id,
            text,
            gold,
            char_len,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn gold(&self) -> Option<&SpanSet> {
        self.gold.as_ref()
    }

    pub fn char_len(&self) -> usize {
        self.char_len
    }
}

/// A classification-corpus record with its derived binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledText {
    id: String,
    text: String,
    toxicity_score: f64,
    label: bool,
}

impl LabeledText {
    /// Validates the score range; the label is `score >= threshold`
    /// (the threshold bound is inclusive).
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        toxicity_score: f64,
        threshold: f64,
    ) -> Result<LabeledText, CorpusError> {
        if !(0.0..=1.0).contains(&toxicity_score) {
            return Err(CorpusError::ScoreOutOfRange(toxicity_score));
        }
        Ok(LabeledText {
            id: id.into(),
            text: text.into(),
            toxicity_score,
            label: toxicity_score >= threshold,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn toxicity_score(&self) -> f64 {
        self.toxicity_score
    }

    pub fn label(&self) -> bool {
        self.label
    }
}

/// Hold-out membership plus the fold assignment of the residual posts.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitPlan {
    holdout_ids: Vec<String>,
    fold_assignment: BTreeMap<String, usize>,
    k: usize,
    seed: u64,
}

impl SplitPlan {
    pub fn holdout_ids(&self) -> &[String] {
        &self.holdout_ids
    }

    pub fn fold_assignment(&self) -> &BTreeMap<String, usize> {
        &self.fold_assignment
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_holdout(&self, id: &str) -> bool {
        self.holdout_ids.binary_search_by(|h| h.as_str().cmp(id)).is_ok()
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_assignment.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0usize; self.k];
        for &fold in self.fold_assignment.values() {
            sizes[fold] += 1;
        }
        sizes
    }

    /// Check the plan against the full corpus id set: hold-out and folds are
    /// disjoint, cover the corpus, and fold sizes differ by at most one.
    pub fn validate(&self, corpus_ids: &BTreeSet<&str>) -> Result<(), CorpusError> {
        for id in &self.holdout_ids {
            if self.fold_assignment.contains_key(id) {
                return Err(CorpusError::PlanOverlap(id.clone()));
            }
        }
        let mut seen: BTreeSet<&str> = self.holdout_ids.iter().map(String::as_str).collect();
        seen.extend(self.fold_assignment.keys().map(String::as_str));
        if &seen != corpus_ids {
            return Err(CorpusError::PlanCoverage);
        }
        if self.fold_assignment.values().any(|&f| f >= self.k) {
            return Err(CorpusError::PlanCoverage);
        }
        let sizes = self.fold_sizes();
        let min = sizes.iter().min().copied().unwrap_or(0);
        let max = sizes.iter().max().copied().unwrap_or(0);
        if max - min > 1 {
            return Err(CorpusError::PlanImbalance { min, max });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusError {
    OffsetOutOfRange { offset: usize, text_chars: usize },
    DuplicateId(String),
    ScoreOutOfRange(f64),
    NoPositives,
    BadNegRatio(usize),
    SingleClass,
    BadFraction(f64),
    BadFoldCount(usize),
    CorpusTooSmall { posts: usize, needed: usize },
    EmptyCorpus,
    PlanOverlap(String),
    PlanCoverage,
    PlanImbalance { min: usize, max: usize },
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::OffsetOutOfRange { offset, text_chars } => write!(
                f,
                "offset {offset} out of range for text of {text_chars} characters"
            ),
            CorpusError::DuplicateId(id) => write!(f, "duplicate post id {id:?}"),
            CorpusError::ScoreOutOfRange(s) => {
                write!(f, "toxicity score {s} outside [0, 1]")
            }
            CorpusError::NoPositives => {
                write!(f, "no positive records; negative ratio is undefined")
            }
            CorpusError::BadNegRatio(r) => write!(f, "negative ratio {r} must be >= 1"),
            CorpusError::SingleClass => write!(f, "both classes must be present"),
            CorpusError::BadFraction(x) => {
                write!(f, "fraction {x} must lie strictly between 0 and 1")
            }
            CorpusError::BadFoldCount(k) => write!(f, "fold count {k} must be >= 2"),
            CorpusError::CorpusTooSmall { posts, needed } => {
                write!(f, "corpus of {posts} posts too small, need at least {needed}")
            }
            CorpusError::EmptyCorpus => write!(f, "corpus is empty"),
            CorpusError::PlanOverlap(id) => {
                write!(f, "post {id:?} is in both hold-out and a fold")
            }
            CorpusError::PlanCoverage => {
                write!(f, "split plan does not cover the corpus exactly")
            }
            CorpusError::PlanImbalance { min, max } => {
                write!(f, "fold sizes differ by more than one ({min}..{max})")
            }
        }
    }
}

impl core::error::Error for CorpusError {}

/// Error from [`parse_spans_field`], carrying the byte position in the raw field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanFieldError {
    Expected { what: &'static str, byte: usize },
    NegativeOffset { byte: usize },
    OffsetTooLarge { byte: usize },
}

impl SpanFieldError {
    pub fn byte(&self) -> usize {
        match self {
            SpanFieldError::Expected { byte, .. }
            | SpanFieldError::NegativeOffset { byte }
            | SpanFieldError::OffsetTooLarge { byte } => *byte,
        }
    }
}

impl fmt::Display for SpanFieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpanFieldError::Expected { what, byte } => {
                write!(f, "expected {what} at byte {byte}")
            }
            SpanFieldError::NegativeOffset { byte } => {
                write!(f, "negative offset at byte {byte}")
            }
            SpanFieldError::OffsetTooLarge { byte } => {
                write!(f, "offset at byte {byte} is too large")
            }
        }
    }
}

impl core::error::Error for SpanFieldError {}

/// Parse a gold-spans field: a bracketed, comma-separated list of
/// non-negative integers, whitespace permitted between items. Duplicates
/// collapse and order is irrelevant; the result is a set.
pub fn parse_spans_field(raw: &str) -> Result<SpanSet, SpanFieldError> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    let skip_ws = |i: &mut usize| {
        while *i < bytes.len() && bytes[*i].is_ascii_whitespace() {
            *i += 1;
        }
    };

    skip_ws(&mut i);
    if i >= bytes.len() || bytes[i] != b'[' {
        return Err(SpanFieldError::Expected { what: "'['", byte: i });
    }
    i += 1;
    skip_ws(&mut i);

    let mut offsets = Vec::new();
    if i < bytes.len() && bytes[i] == b']' {
        i += 1;
    } else {
        loop {
            skip_ws(&mut i);
            if i < bytes.len() && bytes[i] == b'-' {
                return Err(SpanFieldError::NegativeOffset { byte: i });
            }
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i == start {
                return Err(SpanFieldError::Expected { what: "digit", byte: i });
            }
            let offset: usize = raw[start..i]
                .parse()
                .map_err(|_| SpanFieldError::OffsetTooLarge { byte: start })?;
            offsets.push(offset);
            skip_ws(&mut i);
            match bytes.get(i) {
                Some(b',') => i += 1,
                Some(b']') => {
                    i += 1;
                    break;
                }
                _ => {
                    return Err(SpanFieldError::Expected {
                        what: "',' or ']'",
                        byte: i,
                    })
                }
            }
        }
    }
    skip_ws(&mut i);
    if i != bytes.len() {
        return Err(SpanFieldError::Expected {
            what: "end of field",
            byte: i,
        });
    }
    Ok(SpanSet::from(offsets))
}

/// Whitespace-normalize a text for leakage comparison: trim the ends and
/// collapse internal whitespace runs to single spaces. Case is preserved.
pub fn normalize_for_leakage(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Drop every classification record whose normalized text also appears in
/// the span corpus. Keeps the surviving records in their original order.
pub fn remove_leakage(classification: Vec<LabeledText>, spans: &[Post]) -> Vec<LabeledText> {
    let span_texts: BTreeSet<String> = spans
        .iter()
        .map(|p| normalize_for_leakage(p.text()))
        .collect();
    classification
        .into_iter()
        .filter(|r| !span_texts.contains(&normalize_for_leakage(r.text())))
        .collect()
}

/// All positive records (score `>= threshold`) plus `neg_ratio` times as many
/// negatives, sampled uniformly without replacement; when fewer negatives are
/// available, all of them are taken. Positives keep corpus order, negatives
/// follow in draw order.
pub fn build_pretrain_subset(
    corpus: &[LabeledText],
    threshold: f64,
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledText>, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if neg_ratio == 0 {
        return Err(CorpusError::BadNegRatio(neg_ratio));
    }
    let (positives, negatives): (Vec<&LabeledText>, Vec<&LabeledText>) = corpus
        .iter()
        .partition(|r| r.toxicity_score() >= threshold);
    if positives.is_empty() {
        return Err(CorpusError::NoPositives);
    }
    let wanted = neg_ratio.saturating_mul(positives.len()).min(negatives.len());
    let mut rng = SeededRng::new(seed);
    let chosen = rng.sample_indices(negatives.len(), wanted);

    let mut subset: Vec<LabeledText> = positives.into_iter().cloned().collect();
    subset.extend(chosen.into_iter().map(|i| negatives[i].clone()));
    Ok(subset)
}

fn round_half_up(x: f64) -> usize {
    libm::round(x) as usize
}

fn check_unique_ids(posts: &[Post]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for post in posts {
        if !seen.insert(post.id()) {
            return Err(CorpusError::DuplicateId(post.id().to_string()));
        }
    }
    Ok(())
}

/// Reserve `round(holdout_frac * n)` posts as the hold-out (sampled
/// uniformly), then deal the shuffled residual round-robin into `k` folds.
pub fn split_holdout_folds(
    posts: &[Post],
    holdout_frac: f64,
    k: usize,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(CorpusError::BadFraction(holdout_frac));
    }
    if k < 2 {
        return Err(CorpusError::BadFoldCount(k));
    }
    if posts.len() < k {
        return Err(CorpusError::CorpusTooSmall {
            posts: posts.len(),
            needed: k,
        });
    }
    check_unique_ids(posts)?;

    let n = posts.len();
    let holdout_n = round_half_up(holdout_frac * n as f64);
    if n - holdout_n < k {
        return Err(CorpusError::CorpusTooSmall {
            posts: n,
            needed: holdout_n + k,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut order);

    let mut holdout_ids: Vec<String> = order[..holdout_n]
        .iter()
        .map(|&i| posts[i].id().to_string())
        .collect();
    holdout_ids.sort_unstable();

    let fold_assignment: BTreeMap<String, usize> = order[holdout_n..]
        .iter()
        .enumerate()
        .map(|(j, &i)| (posts[i].id().to_string(), j % k))
        .collect();

    Ok(SplitPlan {
        holdout_ids,
        fold_assignment,
        k,
        seed,
    })
}

/// Split a two-class corpus into train and validation parts, preserving the
/// class proportions within one record per class. Outputs keep corpus order.
pub fn stratified_split(
    corpus: &[LabeledText],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<LabeledText>, Vec<LabeledText>), CorpusError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(CorpusError::BadFraction(train_frac));
    }
    let pos: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label()).collect();
    let neg: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].label()).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(CorpusError::SingleClass);
    }

    let mut rng = SeededRng::new(seed);
    let mut train_idx = BTreeSet::new();
    for class in [pos, neg] {
        let take = round_half_up(train_frac * class.len() as f64);
        let mut shuffled = class;
        rng.shuffle(&mut shuffled);
        train_idx.extend(shuffled.into_iter().take(take));
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (i, record) in corpus.iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(record.clone());
        } else {
            validation.push(record.clone());
        }
    }
    Ok((train, validation))
}
