//! Pipeline configuration: a TOML file plus CLI overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spanforge_core::ensemble::VoteStrategy;
use spanforge_core::model::TrainConfig;
use spanforge_core::span::LabelPolicy;

use crate::error::{Error, Result};
use crate::files::ClassificationSchema;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub classification: ClassificationSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paths {
    pub span_corpus: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub classification_corpus: Option<PathBuf>,
    #[serde(default)]
    pub predictions_dir: Option<PathBuf>,
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub holdout_frac: f64,
    pub k: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            holdout_frac: 0.14,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub eval_every_frac: f64,
    pub l2: f64,
    pub ngram_min: usize,
    pub ngram_max: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            eval_every_frac: d.eval_every_frac,
            l2: d.l2,
            ngram_min: d.ngram_min,
            ngram_max: d.ngram_max,
        }
    }
}

impl TrainSection {
    /// Core train config for a given stream seed.
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            eval_every_frac: self.eval_every_frac,
            seed,
            l2: self.l2,
            ngram_min: self.ngram_min,
            ngram_max: self.ngram_max,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub threshold: f64,
    pub gap_fill: bool,
    pub policy: LabelPolicy,
    /// Thresholds tried by the soft-vote sweep; defaults to 0.05..=0.95 in
    /// steps of 0.05.
    pub sweep_grid: Option<Vec<f64>>,
    /// Force a single strategy (`hard:m`, `soft` or `meta`) instead of
    /// selecting over the default candidates.
    pub strategy: Option<String>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            threshold: 0.5,
            gap_fill: true,
            policy: LabelPolicy::AnyOverlap,
            sweep_grid: None,
            strategy: None,
        }
    }
}

impl EnsembleSection {
    pub fn grid(&self) -> Vec<f64> {
        match &self.sweep_grid {
            Some(grid) => grid.clone(),
            None => default_sweep_grid(),
        }
    }
}

pub fn default_sweep_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationSection {
    pub id_col: String,
    pub text_col: String,
    pub score_col: String,
    pub score_threshold: f64,
    pub neg_ratio: usize,
    pub train_frac: f64,
}

impl Default for ClassificationSection {
    fn default() -> Self {
        let schema = ClassificationSchema::default();
        ClassificationSection {
            id_col: schema.id_col,
            text_col: schema.text_col,
            score_col: schema.score_col,
            score_threshold: schema.threshold,
            neg_ratio: 3,
            train_frac: 0.8,
        }
    }
}

impl ClassificationSection {
    pub fn schema(&self) -> ClassificationSchema {
        ClassificationSchema {
            id_col: self.id_col.clone(),
            text_col: self.text_col.clone(),
            score_col: self.score_col.clone(),
            threshold: self.score_threshold,
        }
    }
}

/// Parse a `--strategy` value: `hard:m`, `soft` or `meta`.
pub fn parse_strategy(raw: &str) -> Result<VoteStrategy> {
    if let Some(m) = raw.strip_prefix("hard:") {
        let min_votes: usize = m
            .parse()
            .map_err(|_| Error::invalid(format!("bad vote count in strategy {raw:?}")))?;
        return Ok(VoteStrategy::Hard { min_votes });
    }
    match raw {
        "soft" => Ok(VoteStrategy::Soft { weights: None }),
        "meta" => Ok(VoteStrategy::Meta),
        _ => Err(Error::invalid(format!(
            "unknown strategy {raw:?}; expected hard:<m>, soft or meta"
        ))),
    }
}

/// Parse a `--gap-fill` value: `on` or `off`.
pub fn parse_gap_fill(raw: &str) -> Result<bool> {
    match raw {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(Error::invalid(format!(
            "bad gap-fill value {raw:?}; expected on or off"
        ))),
    }
}

/// Optional CLI overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub holdout_frac: Option<f64>,
    pub threshold: Option<f64>,
    pub policy: Option<LabelPolicy>,
    pub gap_fill: Option<bool>,
    pub strategy: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let body = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&body).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(k) = overrides.k {
            self.split.k = k;
        }
        if let Some(frac) = overrides.holdout_frac {
            self.split.holdout_frac = frac;
        }
        if let Some(threshold) = overrides.threshold {
            self.ensemble.threshold = threshold;
        }
        if let Some(policy) = overrides.policy {
            self.ensemble.policy = policy;
        }
        if let Some(gap_fill) = overrides.gap_fill {
            self.ensemble.gap_fill = gap_fill;
        }
        if let Some(strategy) = &overrides.strategy {
            self.ensemble.strategy = Some(strategy.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.k < 2 {
            return Err(Error::invalid(format!(
                "split.k is {}, must be at least 2",
                self.split.k
            )));
        }
        if !(self.split.holdout_frac > 0.0 && self.split.holdout_frac < 1.0) {
            return Err(Error::invalid(format!(
                "split.holdout_frac is {}, must lie strictly between 0 and 1",
                self.split.holdout_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.ensemble.threshold) {
            return Err(Error::invalid(format!(
                "ensemble.threshold is {}, must lie in [0, 1]",
                self.ensemble.threshold
            )));
        }
        self.train
            .to_train_config(self.seed)
            .validate()
            .map_err(|e| Error::invalid(e.to_string()))?;
        if let Some(strategy) = &self.ensemble.strategy {
            parse_strategy(strategy)?;
        }
        Ok(())
    }
}
