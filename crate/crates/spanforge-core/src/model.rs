//! A deterministic, desk-scale token tagger: lexicon and character n-gram
//! features feeding a logistic output trained by seeded SGD.
//!
//! The tagger stands in for a fine-tuned encoder so the whole pipeline runs
//! and is testable without neural dependencies. The two-step knowledge
//! transfer is mirrored structurally: lexicon rates are estimated from the
//! (leakage-filtered) classification corpus at the post level, then consumed
//! as features during span training.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::Post;
use crate::ensemble::TokenPrediction;
use crate::logistic;
use crate::metrics::corpus_f1;
use crate::rng::SeededRng;
use crate::span::{
    self, LabelPolicy, SpanSet, TokenSpan,
};

/// Decoding used while ranking validation checkpoints.
const VAL_THRESHOLD: f64 = 0.5;
const VAL_GAP_FILL: bool = true;

/// Sparse feature vector: strictly increasing indices with aligned values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl FeatureVector {
    /// Build from arbitrary pairs; indices are sorted and duplicates merged
    /// by summing their values.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> FeatureVector {
        pairs.sort_unstable_by_key(|&(j, _)| j);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (j, v) in pairs {
            if indices.last() == Some(&j) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
            }
        }
        FeatureVector { indices, values }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Validation cadence as a fraction of an epoch; 0.1 evaluates ten times
    /// per epoch.
    pub eval_every_frac: f64,
    pub seed: u64,
    pub l2: f64,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 4,
            eval_every_frac: 0.1,
            seed: 42,
            l2: 1e-6,
            ngram_min: 2,
            ngram_max: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig("learning_rate must be finite and >= 0"));
        }
        if !(self.eval_every_frac > 0.0 && self.eval_every_frac <= 1.0) {
            return Err(TrainError::BadConfig("eval_every_frac must be in (0, 1]"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(TrainError::BadConfig("l2 must be finite and >= 0"));
        }
        if self.learning_rate * self.l2 >= 1.0 {
            return Err(TrainError::BadConfig("learning_rate * l2 must be below 1"));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(TrainError::BadConfig(
                "ngram_min must be >= 1 and <= ngram_max",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    BadConfig(&'static str),
    EmptyTrainSet,
    EmptyValidationSet,
    MissingGold { post_id: String },
    NoTrainTokens,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::BadConfig(msg) => write!(f, "bad train config: {msg}"),
            TrainError::EmptyTrainSet => write!(f, "training set is empty"),
            TrainError::EmptyValidationSet => write!(f, "validation set is empty"),
            TrainError::MissingGold { post_id } => {
                write!(f, "post {post_id:?} has no gold spans")
            }
            TrainError::NoTrainTokens => write!(f, "training posts contain no tokens"),
        }
    }
}

impl core::error::Error for TrainError {}

/// Smoothed per-token toxicity rates, keyed by lowercased token text.
pub type Lexicon = BTreeMap<String, f64>;

/// Estimate token toxicity rates from a labeled classification corpus.
/// Each token occurrence counts toward the label of its post; rates are
/// Laplace-smoothed (add-1), so they stay strictly inside (0, 1).
pub fn estimate_lexicon(corpus: &[crate::corpus::LabeledText]) -> Lexicon {
    let mut toxic: BTreeMap<String, u64> = BTreeMap::new();
    let mut total: BTreeMap<String, u64> = BTreeMap::new();
    for record in corpus {
        for token in span::tokenize_with_offsets(record.text()) {
            let key = token.text.to_lowercase();
            *total.entry(key.clone()).or_insert(0) += 1;
            if record.label() {
                *toxic.entry(key).or_insert(0) += 1;
            }
        }
    }
    total
        .into_iter()
        .map(|(key, n)| {
            let t = toxic.get(&key).copied().unwrap_or(0);
            (key, (t as f64 + 1.0) / (n as f64 + 2.0))
        })
        .collect()
}

fn lexicon_bucket(lexicon: &Lexicon, key: &str) -> String {
    match lexicon.get(key) {
        None => "lex=na".to_string(),
        Some(&score) => {
            let bucket = (libm::floor(score * 10.0) as usize).min(9);
            format!("lex={bucket}")
        }
    }
}

/// The deterministic feature strings of one token in its post context:
/// lowercased identity, character n-grams, an all-punctuation flag, an
/// all-caps flag, the bucketed lexicon rate, and the lowercased identities
/// of the neighboring tokens. Sorted and deduplicated.
pub fn feature_strings(
    tokens: &[TokenSpan],
    index: usize,
    lexicon: &Lexicon,
    ngram_min: usize,
    ngram_max: usize,
) -> Vec<String> {
    let token = &tokens[index];
    let lower = token.text.to_lowercase();
    let mut features = BTreeSet::new();

    features.insert(format!("w={lower}"));

    let chars: Vec<char> = lower.chars().collect();
    for n in ngram_min..=ngram_max {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            let gram: String = window.iter().collect();
            features.insert(format!("ng={gram}"));
        }
    }

    if !token.text.chars().any(char::is_alphanumeric) {
        features.insert("allpunct".to_string());
    }
    let mut has_alpha = false;
    let mut all_upper = true;
    for c in token.text.chars() {
        if c.is_alphabetic() {
            has_alpha = true;
            if !c.is_uppercase() {
                all_upper = false;
            }
        }
    }
    if has_alpha && all_upper {
        features.insert("allcaps".to_string());
    }

    features.insert(lexicon_bucket(lexicon, &lower));

    match index.checked_sub(1).and_then(|i| tokens.get(i)) {
        Some(prev) => features.insert(format!("prev={}", prev.text.to_lowercase())),
        None => features.insert("prev=^".to_string()),
    };
    match tokens.get(index + 1) {
        Some(next) => features.insert(format!("next={}", next.text.to_lowercase())),
        None => features.insert("next=$".to_string()),
    };

    features.into_iter().collect()
}

/// Map a token's feature strings through the vocabulary. Strings absent from
/// the vocabulary are dropped, so out-of-vocabulary tokens fall back to
/// whatever n-gram and flag features are shared with the training split.
pub fn featurize(
    tokens: &[TokenSpan],
    index: usize,
    lexicon: &Lexicon,
    vocab: &BTreeMap<String, usize>,
    ngram_min: usize,
    ngram_max: usize,
) -> FeatureVector {
    let pairs: Vec<(usize, f64)> = feature_strings(tokens, index, lexicon, ngram_min, ngram_max)
        .into_iter()
        .filter_map(|s| vocab.get(&s).map(|&j| (j, 1.0)))
        .collect();
    FeatureVector::from_pairs(pairs)
}

/// A trained token tagger.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tagger {
    weights: Vec<f64>,
    bias: f64,
    vocab: BTreeMap<String, usize>,
    lexicon_scores: Lexicon,
    hparams: TrainConfig,
    val_f1: f64,
}

impl Tagger {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn vocab(&self) -> &BTreeMap<String, usize> {
        &self.vocab
    }

    pub fn lexicon_scores(&self) -> &Lexicon {
        &self.lexicon_scores
    }

    pub fn hparams(&self) -> &TrainConfig {
        &self.hparams
    }

    /// Validation F1 of the selected checkpoint.
    pub fn val_f1(&self) -> f64 {
        self.val_f1
    }

    /// Tokenize a text and emit one probability per token.
    pub fn token_probs(&self, text: &str) -> (Vec<TokenSpan>, Vec<f64>) {
        let tokens = span::tokenize_with_offsets(text);
        let probs = probs_for_tokens(
            &tokens,
            &self.weights,
            self.bias,
            &self.vocab,
            &self.lexicon_scores,
            self.hparams.ngram_min,
            self.hparams.ngram_max,
        );
        (tokens, probs)
    }

    /// Per-token toxicity probabilities for one post, tagged with the model
    /// id so predictions from many models can be merged downstream.
    pub fn predict_token_probs(&self, post: &Post, model_id: &str) -> TokenPrediction {
        let (tokens, probs) = self.token_probs(post.text());
        let triples: Vec<(usize, usize, f64)> = tokens
            .iter()
            .zip(&probs)
            .map(|(t, &p)| (t.start, t.end, p))
            .collect();
        TokenPrediction::new(post.id().to_string(), model_id.to_string(), triples)
            .expect("tokenizer extents are sorted and probabilities are in range")
    }
}

fn probs_for_tokens(
    tokens: &[TokenSpan],
    weights: &[f64],
    bias: f64,
    vocab: &BTreeMap<String, usize>,
    lexicon: &Lexicon,
    ngram_min: usize,
    ngram_max: usize,
) -> Vec<f64> {
    (0..tokens.len())
        .map(|i| {
            let fv = featurize(tokens, i, lexicon, vocab, ngram_min, ngram_max);
            logistic::predict_prob(weights, bias, &fv)
        })
        .collect()
}

/// One validation measurement during training.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckpointEval {
    pub step: usize,
    pub val_f1: f64,
}

/// A trained tagger together with the full validation log of its run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub tagger: Tagger,
    pub evals: Vec<CheckpointEval>,
}

/// Train a tagger on gold-annotated posts.
///
/// Builds the vocabulary from the training split only, projects gold spans
/// onto token labels under `policy`, and runs seeded single-example SGD.
/// After every `ceil(eval_every_frac * steps_per_epoch)` steps the candidate
/// weights decode the validation posts (threshold 0.5, whitespace gap
/// filling) and are scored with the corpus metric; the checkpoint with the
/// highest validation F1 wins, earliest first on ties.
pub fn train_tagger(
    train: &[Post],
    validation: &[Post],
    lexicon: &Lexicon,
    cfg: &TrainConfig,
    policy: LabelPolicy,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if validation.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let require_gold = |posts: &[Post]| -> Result<(), TrainError> {
        match posts.iter().find(|p| p.gold().is_none()) {
            Some(p) => Err(TrainError::MissingGold {
                post_id: p.id().to_string(),
            }),
            None => Ok(()),
        }
    };
    require_gold(train)?;
    require_gold(validation)?;

    // Tokenize once; the vocabulary is built from training tokens only.
    let train_tokens: Vec<Vec<TokenSpan>> = train
        .iter()
        .map(|p| span::tokenize_with_offsets(p.text()))
        .collect();
    let mut vocab_strings = BTreeSet::new();
    for tokens in &train_tokens {
        for i in 0..tokens.len() {
            vocab_strings.extend(feature_strings(
                tokens,
                i,
                lexicon,
                cfg.ngram_min,
                cfg.ngram_max,
            ));
        }
    }
    let vocab: BTreeMap<String, usize> = vocab_strings
        .into_iter()
        .enumerate()
        .map(|(j, s)| (s, j))
        .collect();

    let mut examples: Vec<(FeatureVector, f64)> = Vec::new();
    for (post, tokens) in train.iter().zip(&train_tokens) {
        let labels =
            span::project_spans_to_token_labels(tokens, post.gold().unwrap(), policy);
        for (i, &label) in labels.iter().enumerate() {
            let fv = featurize(tokens, i, lexicon, &vocab, cfg.ngram_min, cfg.ngram_max);
            examples.push((fv, if label { 1.0 } else { 0.0 }));
        }
    }
    if examples.is_empty() {
        return Err(TrainError::NoTrainTokens);
    }

    let val_tokens: Vec<Vec<TokenSpan>> = validation
        .iter()
        .map(|p| span::tokenize_with_offsets(p.text()))
        .collect();

    let steps_per_epoch = examples.len();
    let eval_every =
        (libm::ceil(cfg.eval_every_frac * steps_per_epoch as f64) as usize).max(1);

    let mut evals: Vec<CheckpointEval> = Vec::new();
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut rng = SeededRng::new(cfg.seed);

    let dim = vocab.len();
    let evaluate = |weights: &[f64], bias: f64| -> f64 {
        let decoded: Vec<SpanSet> = validation
            .iter()
            .zip(&val_tokens)
            .map(|(post, tokens)| {
                let probs = probs_for_tokens(
                    tokens,
                    weights,
                    bias,
                    &vocab,
                    lexicon,
                    cfg.ngram_min,
                    cfg.ngram_max,
                );
                span::token_labels_to_offsets(
                    post.text(),
                    tokens,
                    &probs,
                    VAL_THRESHOLD,
                    VAL_GAP_FILL,
                )
                .expect("probabilities are aligned with tokens")
            })
            .collect();
        let report = corpus_f1(
            decoded
                .iter()
                .zip(validation)
                .map(|(pred, post)| (pred, post.gold().unwrap(), post.id())),
        )
        .expect("validation set is nonempty");
        report.mean_f1
    };

    logistic::sgd_train(
        &examples,
        dim,
        cfg.learning_rate,
        cfg.l2,
        cfg.epochs,
        Some(eval_every),
        &mut rng,
        |step, weights, bias| {
            let f1 = evaluate(weights, bias);
            evals.push(CheckpointEval { step, val_f1: f1 });
            let improved = match &best {
                Some((best_f1, _, _)) => f1 > *best_f1,
                None => true,
            };
            if improved {
                best = Some((f1, weights.to_vec(), bias));
            }
        },
    );

    let (val_f1, weights, bias) = best.expect("at least one checkpoint is evaluated");
    Ok(TrainReport {
        tagger: Tagger {
            weights,
            bias,
            vocab,
            lexicon_scores: lexicon.clone(),
            hparams: cfg.clone(),
            val_f1,
        },
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledText;
    use alloc::vec;

    fn post(id: &str, text: &str, gold: SpanSet) -> Post {
        Post::new(id, text, Some(gold)).unwrap()
    }

    fn toy_lexicon() -> Lexicon {
        let corpus = vec![
            LabeledText::new("1", "idiot rant", 0.9, 0.5).unwrap(),
            LabeledText::new("2", "calm words", 0.1, 0.5).unwrap(),
        ];
        estimate_lexicon(&corpus)
    }

    #[test]
    fn lexicon_rates_are_smoothed() {
        let lex = toy_lexicon();
        // "idiot" appears once, in a toxic post: (1+1)/(1+2)
        assert!((lex["idiot"] - 2.0 / 3.0).abs() < 1e-12);
        // "calm" appears once, in a non-toxic post: (0+1)/(1+2)
        assert!((lex["calm"] - 1.0 / 3.0).abs() < 1e-12);
        for score in lex.values() {
            assert!(*score > 0.0 && *score < 1.0);
        }
    }

    #[test]
    fn feature_strings_are_deterministic() {
        let tokens = span::tokenize_with_offsets("You IDIOT !");
        let lex = toy_lexicon();
        let a = feature_strings(&tokens, 1, &lex, 2, 4);
        let b = feature_strings(&tokens, 1, &lex, 2, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn caps_flag_differs_identity_matches() {
        let lower = span::tokenize_with_offsets("idiot");
        let upper = span::tokenize_with_offsets("IDIOT");
        let lex = Lexicon::new();
        let a = feature_strings(&lower, 0, &lex, 2, 4);
        let b = feature_strings(&upper, 0, &lex, 2, 4);
        assert!(a.contains(&"w=idiot".to_string()));
        assert!(b.contains(&"w=idiot".to_string()));
        assert!(!a.contains(&"allcaps".to_string()));
        assert!(b.contains(&"allcaps".to_string()));
    }

    #[test]
    fn short_token_has_no_ngrams() {
        let tokens = span::tokenize_with_offsets("a");
        let strings = feature_strings(&tokens, 0, &Lexicon::new(), 2, 4);
        assert!(strings.iter().all(|s| !s.starts_with("ng=")));
        assert!(strings.contains(&"w=a".to_string()));
        assert!(strings.contains(&"prev=^".to_string()));
        assert!(strings.contains(&"next=$".to_string()));
    }

    #[test]
    fn punctuation_flag() {
        let tokens = span::tokenize_with_offsets("!@#!@");
        let strings = feature_strings(&tokens, 0, &Lexicon::new(), 2, 4);
        assert!(strings.contains(&"allpunct".to_string()));
    }

    #[test]
    fn zero_weights_predict_half() {
        let report = {
            let train = vec![post("t0", "fine words here", SpanSet::new())];
            let val = vec![post("v0", "fine words", SpanSet::new())];
            let cfg = TrainConfig {
                learning_rate: 0.0,
                epochs: 1,
                ..TrainConfig::default()
            };
            train_tagger(&train, &val, &Lexicon::new(), &cfg, LabelPolicy::AnyOverlap).unwrap()
        };
        assert!(report.tagger.weights().iter().all(|&w| w == 0.0));
        assert_eq!(report.tagger.bias(), 0.0);
        let (_, probs) = report.tagger.token_probs("anything at all");
        assert!(probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn empty_post_predicts_nothing() {
        let train = vec![post("t0", "fine words here", SpanSet::new())];
        let val = vec![post("v0", "fine words", SpanSet::new())];
        let report = train_tagger(
            &train,
            &val,
            &Lexicon::new(),
            &TrainConfig::default(),
            LabelPolicy::AnyOverlap,
        )
        .unwrap();
        let empty = Post::new("e", "", Some(SpanSet::new())).unwrap();
        let pred = report.tagger.predict_token_probs(&empty, "m");
        assert!(pred.tokens().is_empty());
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(TrainError::BadConfig(_))));
    }

    #[test]
    fn missing_gold_rejected() {
        let train = vec![Post::new("t0", "words", None).unwrap()];
        let val = vec![post("v0", "words", SpanSet::new())];
        let err = train_tagger(
            &train,
            &val,
            &Lexicon::new(),
            &TrainConfig::default(),
            LabelPolicy::AnyOverlap,
        )
        .unwrap_err();
        assert_eq!(err, TrainError::MissingGold { post_id: "t0".to_string() });
    }

    #[test]
    fn best_checkpoint_dominates_log() {
        let (train, val) = planted_corpus(80, 21);
        let report = train_tagger(
            &train,
            &val,
            &Lexicon::new(),
            &TrainConfig::default(),
            LabelPolicy::AnyOverlap,
        )
        .unwrap();
        for eval in &report.evals {
            assert!(report.tagger.val_f1() >= eval.val_f1);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train, val) = planted_corpus(60, 5);
        let lex = toy_lexicon();
        let cfg = TrainConfig::default();
        let a = train_tagger(&train, &val, &lex, &cfg, LabelPolicy::AnyOverlap).unwrap();
        let b = train_tagger(&train, &val, &lex, &cfg, LabelPolicy::AnyOverlap).unwrap();
        assert_eq!(a.tagger, b.tagger);
    }

    /// Posts whose toxicity is exactly membership in a small planted lexicon.
    fn planted_corpus(n: usize, seed: u64) -> (Vec<Post>, Vec<Post>) {
        const BENIGN: &[&str] = &[
            "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "and", "then",
            "some", "more", "words", "fill", "this", "post", "nicely", "today", "again",
            "maybe", "truly", "happy", "calm", "green", "river", "stone", "cloud", "light",
        ];
        const TOXIC: &[&str] = &[
            "grontle", "plaxik", "vorbun", "snerf", "quablo", "drimzo", "flarp", "wexid",
            "brunta", "zilcho",
        ];
        let mut rng = SeededRng::new(seed);
        let mut posts = Vec::new();
        for i in 0..n {
            let len = 8 + rng.gen_range(8);
            let mut words = Vec::new();
            let mut prev_toxic = true; // no toxic word in first position
            for _ in 0..len {
                if !prev_toxic && rng.next_f64() < 0.2 {
                    words.push((TOXIC[rng.gen_range(TOXIC.len())], true));
                    prev_toxic = true;
                } else {
                    words.push((BENIGN[rng.gen_range(BENIGN.len())], false));
                    prev_toxic = false;
                }
            }
            let mut text = String::new();
            let mut gold = Vec::new();
            for (j, (word, toxic)) in words.iter().enumerate() {
                if j > 0 {
                    text.push(' ');
                }
                let start = text.chars().count();
                text.push_str(word);
                if *toxic {
                    gold.extend(start..start + word.chars().count());
                }
            }
            posts.push(post(&format!("p{i}"), &text, SpanSet::from(gold)));
        }
        let split = n * 3 / 4;
        let val = posts.split_off(split);
        (posts, val)
    }

    #[test]
    fn learns_planted_lexicon() {
        let (train, val) = planted_corpus(200, 33);
        let (val, test) = {
            let mut v = val;
            let t = v.split_off(v.len() / 2);
            (v, t)
        };
        let report = train_tagger(
            &train,
            &val,
            &Lexicon::new(),
            &TrainConfig::default(),
            LabelPolicy::AnyOverlap,
        )
        .unwrap();
        let decoded: Vec<SpanSet> = test
            .iter()
            .map(|p| {
                let (tokens, probs) = report.tagger.token_probs(p.text());
                span::token_labels_to_offsets(p.text(), &tokens, &probs, 0.5, true).unwrap()
            })
            .collect();
        let eval = corpus_f1(
            decoded
                .iter()
                .zip(&test)
                .map(|(pred, p)| (pred, p.gold().unwrap(), p.id())),
        )
        .unwrap();
        assert!(
            eval.mean_f1 >= 0.95,
            "held-out F1 {} below 0.95",
            eval.mean_f1
        );
    }
}
