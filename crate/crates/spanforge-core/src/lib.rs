//! Core algorithms for character-offset toxic-span detection pipelines.
//!
//! This crate holds the pure, IO-free machinery: offset-set span algebra and
//! an offset-tracking tokenizer, the per-post P/R/F1 metric and rank-based
//! ROC-AUC, corpus splitting and sampling, a deterministic logistic token
//! tagger, and hard/soft/meta ensembling of per-token probabilities.
//!
//! Everything is a pure function of its inputs and a seed; repeated runs are
//! bit-identical. The crate is `no_std` (with `alloc`); file formats, the
//! pipeline driver and the CLI live in the companion `spanforge` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod ensemble;
pub mod logistic;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod span;

pub use corpus::{LabeledText, Post, SplitPlan};
pub use ensemble::{EnsembleConfig, MetaClassifier, TokenPrediction, VoteStrategy};
pub use metrics::{EvalReport, PostScore};
pub use model::{Lexicon, Tagger, TrainConfig};
pub use span::{Interval, LabelPolicy, SpanSet, TokenSpan};
