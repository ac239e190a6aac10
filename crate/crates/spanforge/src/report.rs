//! The run report: everything one pipeline run measured, serialized as JSON
//! next to the other artifacts. Apart from the timings section, the report
//! of a rerun with the same config and seed is byte-identical.

use serde::{Deserialize, Serialize};
use spanforge_core::ensemble::StrategyRow;
use spanforge_core::metrics::EvalReport;

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config: PipelineConfig,
    pub split: SplitSummary,
    pub pretrain: Option<PretrainSummary>,
    pub folds: Vec<FoldSummary>,
    pub strategy_table: Vec<StrategyRow>,
    pub selected_strategy: String,
    pub holdout_eval: EvalReport,
    pub test_eval: Option<EvalReport>,
    pub test_posts: Option<usize>,
    pub timings_ms: Vec<StageTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSummary {
    pub posts: usize,
    pub holdout: usize,
    pub k: usize,
    pub fold_sizes: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub classification_records: usize,
    pub after_leakage_filter: usize,
    pub subset_positives: usize,
    pub subset_negatives: usize,
    pub lexicon_entries: usize,
    /// AUC of the lexicon scorer on the stratified validation part; absent
    /// when the validation part ended up single-class.
    pub validation_auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_posts: usize,
    pub val_posts: usize,
    pub best_val_f1: f64,
    pub checkpoints: usize,
}

/// Render a report for terminal reading.
pub fn render(report: &RunReport) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let _ = writeln!(out, "spanforge run report (v{})", report.toolkit_version);
    let _ = writeln!(
        out,
        "split: {} posts -> {} hold-out + {} folds {:?} (config seed {})",
        report.split.posts,
        report.split.holdout,
        report.split.k,
        report.split.fold_sizes,
        report.config.seed
    );
    if let Some(p) = &report.pretrain {
        let auc = match p.validation_auc {
            Some(auc) => format!("{auc:.6}"),
            None => "n/a".into(),
        };
        let _ = writeln!(
            out,
            "pretrain: {} records, {} after leakage filter, subset {}+{} -> {} lexicon entries, validation AUC {}",
            p.classification_records,
            p.after_leakage_filter,
            p.subset_positives,
            p.subset_negatives,
            p.lexicon_entries,
            auc
        );
    }
    for fold in &report.folds {
        let _ = writeln!(
            out,
            "fold {}: train {} / val {} posts, best val F1 {:.6} over {} checkpoints",
            fold.fold, fold.train_posts, fold.val_posts, fold.best_val_f1, fold.checkpoints
        );
    }
    let _ = writeln!(out, "hold-out strategies:");
    for row in &report.strategy_table {
        let _ = writeln!(out, "  {:<24} {:.6}", row.label, row.mean_f1);
    }
    let _ = writeln!(
        out,
        "selected: {} (hold-out F1 {:.6})",
        report.selected_strategy, report.holdout_eval.mean_f1
    );
    match (&report.test_eval, report.test_posts) {
        (Some(eval), _) => {
            let _ = writeln!(out, "test F1: {:.6}", eval.mean_f1);
        }
        (None, Some(n)) => {
            let _ = writeln!(out, "test: {n} posts decoded (no gold provided)");
        }
        (None, None) => {}
    }
    for timing in &report.timings_ms {
        let _ = writeln!(out, "  [{} ms] {}", timing.millis, timing.stage);
    }
    out
}
