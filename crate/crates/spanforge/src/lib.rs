//! File formats, pipeline orchestration and the CLI for toxic span
//! detection experiments. The algorithms live in `spanforge-core`; this
//! crate adds everything that touches the filesystem:
//!
//! - span and classification corpora (CSV with header, `"`-quoting, UTF-8),
//! - per-token prediction interchange (one JSON object per line) for wiring
//!   in externally trained models,
//! - decoded span outputs in the shared task's submission shape,
//! - the configuration-driven `run` pipeline and its JSON run report,
//! - the `spanforge` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod pipeline;
pub mod report;
mod vlog;

pub use cli::cli_entry;
pub use config::{Overrides, PipelineConfig};
pub use error::{Error, Result};
pub use pipeline::run_pipeline;
pub use report::RunReport;
