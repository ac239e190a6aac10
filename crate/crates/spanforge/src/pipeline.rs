//! The full pipeline: ingest, leakage filter, lexicon estimation, hold-out
//! and fold split, per-fold tagger training, hold-out ensembling with
//! strategy selection, and final decoding/scoring on the test corpus.
//!
//! Every stage draws randomness from its own named stream of the single
//! config seed, so reruns are byte-identical apart from timings, and adding
//! a stage never perturbs another stage's draws.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use spanforge_core::corpus::{
    build_pretrain_subset, remove_leakage, split_holdout_folds, stratified_split, LabeledText,
    Post,
};
use spanforge_core::ensemble::{
    apply_strategy, default_candidates, select_strategy, EnsembleConfig, MetaClassifier,
    PostPredictions, StrategySelection, TokenPrediction,
};
use spanforge_core::metrics::{corpus_f1, roc_auc, EvalReport};
use spanforge_core::model::{estimate_lexicon, train_tagger, Lexicon};
use spanforge_core::rng::stream_seed;
use spanforge_core::span::{tokenize_with_offsets, SpanSet};

use crate::config::{parse_strategy, PipelineConfig};
use crate::error::{Error, Result};
use crate::files;
use crate::report::{FoldSummary, PretrainSummary, RunReport, SplitSummary, StageTiming};
use crate::vlog::{vdebug, vinfo};

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn new() -> Stages {
        Stages { timings: Vec::new() }
    }

    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        vinfo!("stage {stage}...");
        let start = Instant::now();
        let out = f().map_err(|e| e.at_stage(stage))?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis: start.elapsed().as_millis() as u64,
        });
        Ok(out)
    }
}

/// Result of lexicon estimation over a classification corpus.
pub struct LexiconBuild {
    pub lexicon: Lexicon,
    pub summary: PretrainSummary,
}

/// Lexicon estimation mirroring the two-step transfer: leakage-filter the
/// classification corpus against the span corpora, build the positives-plus-
/// sampled-negatives subset, split it stratified, estimate rates on the
/// train part and report the lexicon scorer's AUC on the validation part.
pub fn build_lexicon(
    classification: Vec<LabeledText>,
    span_posts: &[Post],
    section: &crate::config::ClassificationSection,
    seed: u64,
) -> Result<LexiconBuild> {
    let total = classification.len();
    let filtered = remove_leakage(classification, span_posts);
    let after_filter = filtered.len();
    vdebug!("leakage filter kept {after_filter} of {total} records");

    let subset = build_pretrain_subset(
        &filtered,
        section.score_threshold,
        section.neg_ratio,
        stream_seed(seed, "pretrain_subset"),
    )
    .map_err(|e| Error::invalid(e.to_string()))?;
    let positives = subset.iter().filter(|r| r.label()).count();
    let negatives = subset.len() - positives;

    let (train, validation) = stratified_split(
        &subset,
        section.train_frac,
        stream_seed(seed, "pretrain_split"),
    )
    .map_err(|e| Error::invalid(e.to_string()))?;

    let lexicon = estimate_lexicon(&train);

    // Post-level scorer for the AUC report: the highest lexicon rate among
    // the post's tokens (one toxic token is enough to make a post toxic),
    // 0.5 for unseen tokens and empty posts.
    let score_post = |text: &str| -> f64 {
        let tokens = tokenize_with_offsets(text);
        if tokens.is_empty() {
            return 0.5;
        }
        tokens
            .iter()
            .map(|t| lexicon.get(&t.text.to_lowercase()).copied().unwrap_or(0.5))
            .fold(0.0, f64::max)
    };
    let scores: Vec<f64> = validation.iter().map(|r| score_post(r.text())).collect();
    let labels: Vec<bool> = validation.iter().map(|r| r.label()).collect();
    let validation_auc = roc_auc(&scores, &labels).ok();

    Ok(LexiconBuild {
        summary: PretrainSummary {
            classification_records: total,
            after_leakage_filter: after_filter,
            subset_positives: positives,
            subset_negatives: negatives,
            lexicon_entries: lexicon.len(),
            validation_auc,
        },
        lexicon,
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Group predictions per post, requiring every model to cover every post.
fn predictions_per_post<'a>(
    posts: impl IntoIterator<Item = &'a Post>,
    all: &BTreeMap<files::PredKey, TokenPrediction>,
    model_ids: &[String],
) -> Result<Vec<(&'a Post, BTreeMap<String, TokenPrediction>)>> {
    posts
        .into_iter()
        .map(|post| {
            let mut per_model = BTreeMap::new();
            for model_id in model_ids {
                let key = (post.id().to_string(), model_id.clone());
                let pred = all.get(&key).ok_or_else(|| {
                    Error::invalid(format!(
                        "model {:?} has no prediction for post {:?}",
                        model_id,
                        post.id()
                    ))
                })?;
                per_model.insert(model_id.clone(), pred.clone());
            }
            Ok((post, per_model))
        })
        .collect()
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut stages = Stages::new();
    let out_dir = cfg.paths.output_dir.clone();
    ensure_dir(&out_dir)?;
    ensure_dir(&out_dir.join("models"))?;
    ensure_dir(&out_dir.join("predictions"))?;
    ensure_dir(&out_dir.join("spans"))?;

    // ingest
    let (posts, test_posts, classification) = stages.run("ingest", || {
        let posts = files::load_span_corpus(&cfg.paths.span_corpus)?;
        if posts.is_empty() {
            return Err(Error::invalid(format!(
                "{}: span corpus is empty",
                cfg.paths.span_corpus.display()
            )));
        }
        let test_posts = match &cfg.paths.test_corpus {
            Some(path) => Some(files::load_text_corpus(path)?),
            None => None,
        };
        let classification = match &cfg.paths.classification_corpus {
            Some(path) => Some(files::load_classification_corpus(
                path,
                &cfg.classification.schema(),
            )?),
            None => None,
        };
        Ok((posts, test_posts, classification))
    })?;

    // Row-number ids may repeat across the two corpora; that is fine for the
    // pipeline itself (predictions are kept per corpus) but makes external
    // prediction files ambiguous.
    let ids_overlap = test_posts.as_ref().is_some_and(|test| {
        let train_ids: std::collections::BTreeSet<&str> = posts.iter().map(|p| p.id()).collect();
        test.iter().any(|p| train_ids.contains(p.id()))
    });
    if ids_overlap && cfg.paths.predictions_dir.is_some() {
        return Err(Error::invalid(
            "train and test corpora share post ids; add an id column to use \
             external predictions"
                .to_string(),
        ));
    }

    // pretrain: leakage filter + subset + lexicon estimation + AUC
    let (lexicon, pretrain_summary) = match classification {
        Some(classification) => stages.run("pretrain", || {
            let mut span_posts = posts.clone();
            if let Some(test) = &test_posts {
                span_posts.extend(test.iter().cloned());
            }
            let built = build_lexicon(classification, &span_posts, &cfg.classification, cfg.seed)?;
            files::save_json(&out_dir.join("lexicon.json"), &built.lexicon)?;
            Ok((built.lexicon, Some(built.summary)))
        })?,
        None => (Lexicon::new(), None),
    };

    // split
    let plan = stages.run("split", || {
        let plan = split_holdout_folds(
            &posts,
            cfg.split.holdout_frac,
            cfg.split.k,
            stream_seed(cfg.seed, "holdout_split"),
        )
        .map_err(|e| Error::invalid(e.to_string()))?;
        files::save_json(&out_dir.join("split.json"), &plan)?;
        Ok(plan)
    })?;
    let holdout_posts: Vec<&Post> = posts.iter().filter(|p| plan.is_holdout(p.id())).collect();
    if holdout_posts.is_empty() {
        return Err(Error::invalid(
            "hold-out is empty; raise holdout_frac or corpus size".to_string(),
        ));
    }

    // train one tagger per fold, each validated on its held fold, and
    // collect every model's predictions on the hold-out and test posts
    let mut fold_summaries = Vec::new();
    let mut holdout_preds: BTreeMap<files::PredKey, TokenPrediction> = BTreeMap::new();
    let mut test_preds: BTreeMap<files::PredKey, TokenPrediction> = BTreeMap::new();
    let mut fold_model_ids = Vec::new();
    for fold in 0..plan.k() {
        let model_id = format!("fold{fold}");
        let tagger = stages.run("train", || {
            let train: Vec<Post> = posts
                .iter()
                .filter(|p| plan.fold_of(p.id()).is_some_and(|f| f != fold))
                .cloned()
                .collect();
            let val: Vec<Post> = posts
                .iter()
                .filter(|p| plan.fold_of(p.id()) == Some(fold))
                .cloned()
                .collect();
            let train_cfg = cfg
                .train
                .to_train_config(stream_seed(cfg.seed, &format!("train_fold{fold}")));
            let report = train_tagger(&train, &val, &lexicon, &train_cfg, cfg.ensemble.policy)
                .map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
            vinfo!(
                "fold {fold}: best val F1 {:.6} ({} checkpoints)",
                report.tagger.val_f1(),
                report.evals.len()
            );
            files::save_json(
                &out_dir.join("models").join(format!("{model_id}.json")),
                &report.tagger,
            )?;
            fold_summaries.push(FoldSummary {
                fold,
                train_posts: train.len(),
                val_posts: val.len(),
                best_val_f1: report.tagger.val_f1(),
                checkpoints: report.evals.len(),
            });
            Ok(report.tagger)
        })?;

        stages.run("predict", || {
            for post in &holdout_posts {
                let pred = tagger.predict_token_probs(post, &model_id);
                holdout_preds.insert((post.id().to_string(), model_id.clone()), pred);
            }
            if let Some(test) = &test_posts {
                for post in test {
                    let pred = tagger.predict_token_probs(post, &model_id);
                    test_preds.insert((post.id().to_string(), model_id.clone()), pred);
                }
            }
            Ok(())
        })?;
        fold_model_ids.push(model_id);
    }

    // external predictions, if any; they must cover every hold-out post and,
    // when a test corpus is given, every test post
    let mut model_ids = fold_model_ids.clone();
    if let Some(dir) = &cfg.paths.predictions_dir {
        stages.run("external", || {
            let mut index = files::text_chars_index(&posts);
            if let Some(test) = &test_posts {
                index.extend(files::text_chars_index(test));
            }
            let external = files::load_predictions_dir(dir, &index)?;
            let mut external_ids: Vec<String> =
                external.keys().map(|(_, m)| m.clone()).collect();
            external_ids.sort();
            external_ids.dedup();
            for id in &external_ids {
                if fold_model_ids.contains(id) {
                    return Err(Error::invalid(format!(
                        "external model id {id:?} clashes with a fold model"
                    )));
                }
            }
            vdebug!(
                "loaded {} external predictions from {} models",
                external.len(),
                external_ids.len()
            );
            for ((post_id, model_id), pred) in external {
                if plan.is_holdout(&post_id) {
                    holdout_preds.insert((post_id, model_id), pred);
                } else if test_posts
                    .as_ref()
                    .is_some_and(|test| test.iter().any(|p| p.id() == post_id))
                {
                    test_preds.insert((post_id, model_id), pred);
                }
                // predictions for fold posts are valid but unused
            }
            model_ids.extend(external_ids);
            model_ids.sort();
            Ok(())
        })?;
    }

    // persist this run's own predictions
    stages.run("persist_predictions", || {
        files::write_predictions(
            &out_dir.join("predictions/holdout.jsonl"),
            holdout_preds
                .iter()
                .filter(|((_, m), _)| fold_model_ids.contains(m))
                .map(|(_, pred)| pred),
        )?;
        if test_posts.is_some() {
            files::write_predictions(
                &out_dir.join("predictions/test.jsonl"),
                test_preds
                    .iter()
                    .filter(|((_, m), _)| fold_model_ids.contains(m))
                    .map(|(_, pred)| pred),
            )?;
        }
        Ok(())
    })?;

    // strategy selection on the hold-out
    let selection: StrategySelection = stages.run("select", || {
        let grouped =
            predictions_per_post(holdout_posts.iter().copied(), &holdout_preds, &model_ids)?;
        let post_preds: Vec<PostPredictions> = grouped
            .into_iter()
            .map(|(post, preds)| {
                let gold = post
                    .gold()
                    .ok_or_else(|| {
                        Error::invalid(format!("hold-out post {:?} has no gold", post.id()))
                    })?
                    .clone();
                PostPredictions::new(post.id().to_string(), post.text().to_string(), gold, preds)
                    .map_err(|e| Error::invalid(e.to_string()))
            })
            .collect::<Result<_>>()?;

        let candidates = match &cfg.ensemble.strategy {
            Some(forced) => vec![EnsembleConfig {
                strategy: parse_strategy(forced)?,
                threshold: cfg.ensemble.threshold,
                gap_fill: cfg.ensemble.gap_fill,
            }],
            None => default_candidates(
                &post_preds,
                cfg.ensemble.threshold,
                cfg.ensemble.gap_fill,
                &cfg.ensemble.grid(),
            )
            .map_err(|e| Error::invalid(e.to_string()))?,
        };
        let meta_cfg = cfg.train.to_train_config(stream_seed(cfg.seed, "meta"));
        let selection = select_strategy(&post_preds, &candidates, &meta_cfg, cfg.ensemble.policy)
            .map_err(|e| Error::invalid(e.to_string()))?;
        vinfo!(
            "selected {} at hold-out F1 {:.6}",
            selection.config.label(),
            selection.report.mean_f1
        );

        if let Some(meta) = &selection.meta {
            files::save_json(&out_dir.join("models/meta.json"), meta)?;
        }
        let decoded: Vec<(String, SpanSet)> = post_preds
            .iter()
            .map(|pp| {
                let spans = apply_strategy(
                    &pp.text,
                    pp.preds(),
                    &selection.config,
                    selection.meta.as_ref(),
                )
                .map_err(|e| Error::invalid(e.to_string()))?;
                Ok((pp.post_id.clone(), spans))
            })
            .collect::<Result<_>>()?;
        files::write_spans_file(
            &out_dir.join("spans/holdout.txt"),
            decoded.iter().map(|(id, s)| (id.as_str(), s)),
        )?;
        Ok(selection)
    })?;

    // decode and, when gold is present, score the test corpus
    let (test_eval, test_count) = match &test_posts {
        Some(test) => stages.run("test", || {
            let grouped = predictions_per_post(test.iter(), &test_preds, &model_ids)?;
            let decoded: Vec<(&Post, SpanSet)> = grouped
                .into_iter()
                .map(|(post, preds)| {
                    let spans = apply_strategy(
                        post.text(),
                        &preds,
                        &selection.config,
                        selection.meta.as_ref(),
                    )
                    .map_err(|e| Error::invalid(format!("post {:?}: {e}", post.id())))?;
                    Ok((post, spans))
                })
                .collect::<Result<_>>()?;
            files::write_spans_file(
                &out_dir.join("spans/test.txt"),
                decoded.iter().map(|(post, s)| (post.id(), s)),
            )?;
            let eval = if decoded.iter().all(|(post, _)| post.gold().is_some()) {
                Some(
                    corpus_f1(
                        decoded
                            .iter()
                            .map(|(post, spans)| (spans, post.gold().unwrap(), post.id())),
                    )
                    .map_err(|e| Error::invalid(e.to_string()))?,
                )
            } else {
                None
            };
            if let Some(eval) = &eval {
                vinfo!("test F1 {:.6} over {} posts", eval.mean_f1, decoded.len());
            }
            Ok((eval, Some(decoded.len())))
        })?,
        None => (None, None),
    };

    let mut report = RunReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        split: SplitSummary {
            posts: posts.len(),
            holdout: plan.holdout_ids().len(),
            k: plan.k(),
            fold_sizes: plan.fold_sizes(),
            seed: plan.seed(),
        },
        pretrain: pretrain_summary,
        folds: fold_summaries,
        strategy_table: selection.table.clone(),
        selected_strategy: selection.config.label(),
        holdout_eval: selection.report.clone(),
        test_eval,
        test_posts: test_count,
        timings_ms: Vec::new(),
    };
    report.timings_ms = std::mem::take(&mut stages.timings);
    files::save_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Decode a post set under a saved ensemble configuration.
pub fn decode_posts(
    posts: &[Post],
    preds: &BTreeMap<files::PredKey, TokenPrediction>,
    model_ids: &[String],
    config: &EnsembleConfig,
    meta: Option<&MetaClassifier>,
) -> Result<Vec<(String, SpanSet)>> {
    predictions_per_post(posts.iter(), preds, model_ids)?
        .into_iter()
        .map(|(post, per_model)| {
            let spans = apply_strategy(post.text(), &per_model, config, meta)
                .map_err(|e| Error::invalid(format!("post {:?}: {e}", post.id())))?;
            Ok((post.id().to_string(), spans))
        })
        .collect()
}

/// Score decoded spans against a gold corpus. Every gold post needs a
/// decoded row and every decoded row a gold post.
pub fn score_decoded(
    decoded: &BTreeMap<String, SpanSet>,
    gold_posts: &[Post],
) -> Result<EvalReport> {
    let pairs: Vec<(&SpanSet, &SpanSet, &str)> = gold_posts
        .iter()
        .map(|post| {
            let gold = post.gold().ok_or_else(|| {
                Error::invalid(format!("post {:?} has no gold spans", post.id()))
            })?;
            let pred = decoded.get(post.id()).ok_or_else(|| {
                Error::invalid(format!("no prediction for post {:?}", post.id()))
            })?;
            Ok((pred, gold, post.id()))
        })
        .collect::<Result<_>>()?;
    for post_id in decoded.keys() {
        if !gold_posts.iter().any(|p| p.id() == post_id) {
            return Err(Error::invalid(format!(
                "prediction for unknown post {post_id:?}"
            )));
        }
    }
    corpus_f1(pairs).map_err(|e| Error::invalid(e.to_string()))
}
