//! The `spanforge` command line: ingest, split, train, predict, ensemble,
//! sweep, evaluate, run and report subcommands.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, bad data,
//! bad config), 2 on I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use spanforge_core::ensemble::{EnsembleConfig, MetaClassifier, ScoredPost, soft_vote, sweep_threshold};
use spanforge_core::model::train_tagger;
use spanforge_core::rng::stream_seed;
use spanforge_core::span::LabelPolicy;
use spanforge_core::{Post, SplitPlan, TokenPrediction};

use crate::config::{
    default_sweep_grid, parse_gap_fill, parse_strategy, Overrides, PipelineConfig,
};
use crate::error::{Error, Result, EXIT_VALIDATION};
use crate::files;
use crate::pipeline;
use crate::report::{render, RunReport};
use crate::vlog::vinfo;

#[derive(Parser)]
#[command(
    name = "spanforge",
    version,
    about = "Toxic span detection pipelines over character offsets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate span corpora and report their post counts.
    Ingest {
        /// Corpus files to inspect.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Produce a hold-out/fold split plan for a span corpus.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.14)]
        holdout_frac: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Where to write the split plan (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one tagger per fold of a split plan.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Split plan produced by `split`.
        #[arg(long)]
        plan: PathBuf,
        /// Previously estimated lexicon (JSON map token -> rate).
        #[arg(long, conflicts_with = "classification")]
        lexicon: Option<PathBuf>,
        /// Classification corpus to estimate the lexicon from.
        #[arg(long)]
        classification: Option<PathBuf>,
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long, default_value = "any")]
        policy: String,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for fold models (and lexicon.json when estimated).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit per-token probabilities for a corpus under one or more models.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        /// Model files; the model id is the file stem. Repeatable.
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine prediction files into decoded spans under one strategy.
    Ensemble {
        #[arg(long)]
        corpus: PathBuf,
        /// Prediction files (JSON lines). Repeatable.
        #[arg(long, required = true)]
        preds: Vec<PathBuf>,
        /// hard:<m>, soft or meta.
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// on or off.
        #[arg(long, default_value = "on")]
        gap_fill: String,
        /// Trained meta-classifier (required for --strategy meta).
        #[arg(long)]
        meta_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep decoding thresholds of (soft-combined) predictions against gold.
    Sweep {
        /// Gold span corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Prediction files; several are soft-combined uniformly. Repeatable.
        #[arg(long, required = true)]
        preds: Vec<PathBuf>,
        /// Grid as start:end:step; defaults to 0.05:0.95:0.05.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value = "on")]
        gap_fill: String,
    },
    /// Score a decoded spans file against a gold corpus; prints mean F1.
    Evaluate {
        /// Spans file in submission shape.
        #[arg(long)]
        pred: PathBuf,
        /// Gold span corpus.
        #[arg(long)]
        gold: PathBuf,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        holdout_frac: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// any, majority or full.
        #[arg(long)]
        policy: Option<String>,
        /// on or off.
        #[arg(long)]
        gap_fill: Option<String>,
        /// Force a single strategy: hard:<m>, soft or meta.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Render a run report for reading.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct SchemaArgs {
    #[arg(long, default_value = "id")]
    id_col: String,
    #[arg(long, default_value = "comment_text")]
    text_col: String,
    #[arg(long, default_value = "target")]
    score_col: String,
    #[arg(long, default_value_t = 0.5)]
    score_threshold: f64,
    #[arg(long, default_value_t = 3)]
    neg_ratio: usize,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    eval_every_frac: f64,
    #[arg(long, default_value_t = 1e-6)]
    l2: f64,
    #[arg(long, default_value_t = 2)]
    ngram_min: usize,
    #[arg(long, default_value_t = 4)]
    ngram_max: usize,
}

/// Parse and run; returns the process exit code.
pub fn cli_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version arrive here too and are not failures
            let code = if err.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            err.exit_code()
        }
    }
}

fn parse_policy(raw: &str) -> Result<LabelPolicy> {
    LabelPolicy::parse(raw).ok_or_else(|| {
        Error::invalid(format!(
            "unknown policy {raw:?}; expected any, majority or full"
        ))
    })
}

fn parse_grid(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    let [start, end, step] = parts.as_slice() else {
        return Err(Error::invalid(format!(
            "bad grid {raw:?}; expected start:end:step"
        )));
    };
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::invalid(format!("bad grid number {s:?}")))
    };
    let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
    if step <= 0.0 || end < start {
        return Err(Error::invalid(format!("bad grid {raw:?}")));
    }
    let mut grid = Vec::new();
    let mut value = start;
    while value <= end + step * 1e-9 {
        grid.push(value.min(end));
        value += step;
    }
    Ok(grid)
}

fn load_predictions_files(
    paths: &[PathBuf],
    posts: &[Post],
) -> Result<BTreeMap<files::PredKey, TokenPrediction>> {
    let index = files::text_chars_index(posts);
    let mut preds = BTreeMap::new();
    for path in paths {
        files::load_predictions_file(path, &index, &mut preds)?;
    }
    Ok(preds)
}

fn model_ids_of(preds: &BTreeMap<files::PredKey, TokenPrediction>) -> Vec<String> {
    let mut ids: Vec<String> = preds.keys().map(|(_, m)| m.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { files: paths } => cmd_ingest(&paths),
        Command::Split {
            corpus,
            holdout_frac,
            k,
            seed,
            out,
        } => cmd_split(&corpus, holdout_frac, k, seed, &out),
        Command::Train {
            corpus,
            plan,
            lexicon,
            classification,
            schema,
            policy,
            train,
            seed,
            out_dir,
        } => cmd_train(
            &corpus,
            &plan,
            lexicon.as_deref(),
            classification.as_deref(),
            &schema,
            &policy,
            &train,
            seed,
            &out_dir,
        ),
        Command::Predict { corpus, model, out } => cmd_predict(&corpus, &model, &out),
        Command::Ensemble {
            corpus,
            preds,
            strategy,
            threshold,
            gap_fill,
            meta_model,
            out,
        } => cmd_ensemble(
            &corpus,
            &preds,
            &strategy,
            threshold,
            &gap_fill,
            meta_model.as_deref(),
            &out,
        ),
        Command::Sweep {
            corpus,
            preds,
            grid,
            gap_fill,
        } => cmd_sweep(&corpus, &preds, grid.as_deref(), &gap_fill),
        Command::Evaluate { pred, gold } => cmd_evaluate(&pred, &gold),
        Command::Run {
            config,
            seed,
            k,
            holdout_frac,
            threshold,
            policy,
            gap_fill,
            strategy,
        } => {
            let overrides = Overrides {
                seed,
                k,
                holdout_frac,
                threshold,
                policy: policy.as_deref().map(parse_policy).transpose()?,
                gap_fill: gap_fill.as_deref().map(parse_gap_fill).transpose()?,
                strategy,
            };
            cmd_run(&config, &overrides)
        }
        Command::Report { report } => {
            let report: RunReport = files::load_json(&report)?;
            print!("{}", render(&report));
            Ok(())
        }
    }
}

fn cmd_ingest(paths: &[PathBuf]) -> Result<()> {
    for path in paths {
        let posts = files::load_text_corpus(path)?;
        let with_gold = posts.iter().filter(|p| p.gold().is_some()).count();
        vinfo!("{}: {} of {} posts annotated", path.display(), with_gold, posts.len());
        println!("{}: {} posts", path.display(), posts.len());
    }
    Ok(())
}

fn cmd_split(corpus: &Path, holdout_frac: f64, k: usize, seed: u64, out: &Path) -> Result<()> {
    let posts = files::load_span_corpus(corpus)?;
    let plan = spanforge_core::corpus::split_holdout_folds(&posts, holdout_frac, k, seed)
        .map_err(|e| Error::invalid(e.to_string()))?;
    files::save_json(out, &plan)?;
    println!(
        "{} posts -> {} hold-out + folds {:?}",
        posts.len(),
        plan.holdout_ids().len(),
        plan.fold_sizes()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    corpus: &Path,
    plan_path: &Path,
    lexicon_path: Option<&Path>,
    classification: Option<&Path>,
    schema: &SchemaArgs,
    policy: &str,
    train_args: &TrainArgs,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let policy = parse_policy(policy)?;
    let posts = files::load_span_corpus(corpus)?;
    let plan: SplitPlan = files::load_json(plan_path)?;
    let ids = posts.iter().map(|p| p.id()).collect();
    plan.validate(&ids)
        .map_err(|e| Error::invalid(format!("{}: {e}", plan_path.display())))?;

    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let lexicon = match (lexicon_path, classification) {
        (Some(path), _) => files::load_json(path)?,
        (None, Some(path)) => {
            let schema_cfg = files::ClassificationSchema {
                id_col: schema.id_col.clone(),
                text_col: schema.text_col.clone(),
                score_col: schema.score_col.clone(),
                threshold: schema.score_threshold,
            };
            let records = files::load_classification_corpus(path, &schema_cfg)?;
            let section = crate::config::ClassificationSection {
                id_col: schema.id_col.clone(),
                text_col: schema.text_col.clone(),
                score_col: schema.score_col.clone(),
                score_threshold: schema.score_threshold,
                neg_ratio: schema.neg_ratio,
                train_frac: schema.train_frac,
            };
            let built = pipeline::build_lexicon(records, &posts, &section, seed)?;
            files::save_json(&out_dir.join("lexicon.json"), &built.lexicon)?;
            if let Some(auc) = built.summary.validation_auc {
                println!("lexicon validation AUC: {auc:.6}");
            }
            built.lexicon
        }
        (None, None) => Default::default(),
    };

    for fold in 0..plan.k() {
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
        let cfg = spanforge_core::TrainConfig {
            learning_rate: train_args.learning_rate,
            epochs: train_args.epochs,
            eval_every_frac: train_args.eval_every_frac,
            seed: stream_seed(seed, &format!("train_fold{fold}")),
            l2: train_args.l2,
            ngram_min: train_args.ngram_min,
            ngram_max: train_args.ngram_max,
        };
        let report = train_tagger(&train, &val, &lexicon, &cfg, policy)
            .map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
        files::save_json(&out_dir.join(format!("fold{fold}.json")), &report.tagger)?;
        println!("fold {fold}: val F1 {:.6}", report.tagger.val_f1());
    }
    Ok(())
}

fn cmd_predict(corpus: &Path, models: &[PathBuf], out: &Path) -> Result<()> {
    let posts = files::load_text_corpus(corpus)?;
    let mut rows: Vec<TokenPrediction> = Vec::new();
    for model_path in models {
        let model_id = model_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let tagger: spanforge_core::Tagger = files::load_json(model_path)?;
        for post in &posts {
            rows.push(tagger.predict_token_probs(post, &model_id));
        }
    }
    files::write_predictions(out, rows.iter())?;
    println!("{} predictions -> {}", rows.len(), out.display());
    Ok(())
}

fn cmd_ensemble(
    corpus: &Path,
    pred_paths: &[PathBuf],
    strategy: &str,
    threshold: f64,
    gap_fill: &str,
    meta_model: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let strategy = parse_strategy(strategy)?;
    let gap_fill = parse_gap_fill(gap_fill)?;
    let posts = files::load_text_corpus(corpus)?;
    let preds = load_predictions_files(pred_paths, &posts)?;
    let model_ids = model_ids_of(&preds);
    if model_ids.is_empty() {
        return Err(Error::invalid("no predictions loaded".to_string()));
    }
    let meta: Option<MetaClassifier> = match meta_model {
        Some(path) => Some(files::load_json(path)?),
        None => None,
    };
    let config = EnsembleConfig {
        strategy,
        threshold,
        gap_fill,
    };
    let decoded = pipeline::decode_posts(&posts, &preds, &model_ids, &config, meta.as_ref())?;
    files::write_spans_file(out, decoded.iter().map(|(id, s)| (id.as_str(), s)))?;
    println!("{} posts decoded -> {}", decoded.len(), out.display());
    Ok(())
}

fn cmd_sweep(
    corpus: &Path,
    pred_paths: &[PathBuf],
    grid: Option<&str>,
    gap_fill: &str,
) -> Result<()> {
    let gap_fill = parse_gap_fill(gap_fill)?;
    let grid = match grid {
        Some(raw) => parse_grid(raw)?,
        None => default_sweep_grid(),
    };
    let posts = files::load_span_corpus(corpus)?;
    let preds = load_predictions_files(pred_paths, &posts)?;
    let model_ids = model_ids_of(&preds);

    let scored: Vec<ScoredPost> = posts
        .iter()
        .map(|post| {
            let mut per_model = BTreeMap::new();
            for model_id in &model_ids {
                let key = (post.id().to_string(), model_id.clone());
                let pred = preds.get(&key).ok_or_else(|| {
                    Error::invalid(format!(
                        "model {model_id:?} has no prediction for post {:?}",
                        post.id()
                    ))
                })?;
                per_model.insert(model_id.clone(), pred.clone());
            }
            let (values, _) = soft_vote(post.text(), &per_model, None, 0.5, gap_fill)
                .map_err(|e| Error::invalid(e.to_string()))?;
            let extents = per_model
                .values()
                .next()
                .expect("at least one model")
                .extents();
            Ok(ScoredPost {
                post_id: post.id().to_string(),
                text: post.text().to_string(),
                extents,
                values,
                gold: post
                    .gold()
                    .ok_or_else(|| {
                        Error::invalid(format!("post {:?} has no gold spans", post.id()))
                    })?
                    .clone(),
            })
        })
        .collect::<Result<_>>()?;

    for &threshold in &grid {
        let (_, f1) = sweep_threshold(&scored, &[threshold], gap_fill)
            .map_err(|e| Error::invalid(e.to_string()))?;
        println!("{threshold:.2}\t{f1:.6}");
    }
    let (best_threshold, best_f1) =
        sweep_threshold(&scored, &grid, gap_fill).map_err(|e| Error::invalid(e.to_string()))?;
    println!("best\t{best_threshold:.2}\t{best_f1:.6}");
    Ok(())
}

fn cmd_evaluate(pred: &Path, gold: &Path) -> Result<()> {
    let gold_posts = files::load_span_corpus(gold)?;
    let decoded = files::load_spans_file(pred)?;
    let report = pipeline::score_decoded(&decoded, &gold_posts)?;
    println!("{:.6}", report.mean_f1);
    Ok(())
}

fn cmd_run(config: &Path, overrides: &Overrides) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    cfg.apply(overrides);
    let report = pipeline::run_pipeline(&cfg)?;
    println!(
        "selected {} | hold-out F1 {:.6}{}",
        report.selected_strategy,
        report.holdout_eval.mean_f1,
        match &report.test_eval {
            Some(eval) => format!(" | test F1 {:.6}", eval.mean_f1),
            None => String::new(),
        }
    );
    println!(
        "report: {}",
        cfg.paths.output_dir.join("report.json").display()
    );
    Ok(())
}
