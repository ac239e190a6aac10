//! File formats: span and classification corpora (CSV), per-token prediction
//! interchange (JSON lines), decoded span outputs in the shared task's
//! submission shape, and JSON artifacts (models, split plans, lexicons).
//!
//! Corpus files are comma-separated UTF-8 with a header row and `"`-quoting
//! (doubled quotes escape). A span corpus needs `spans` and `text` columns;
//! an optional `id` column overrides the default zero-based row-number ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spanforge_core::corpus::{parse_spans_field, LabeledText, Post};
use spanforge_core::ensemble::TokenPrediction;
use spanforge_core::span::SpanSet;

use crate::error::{Error, Result};

pub const SPANS_COLUMN: &str = "spans";
pub const TEXT_COLUMN: &str = "text";
pub const ID_COLUMN: &str = "id";

/// Column mapping for classification corpora, with the score threshold that
/// derives the binary label. Defaults follow the public toxicity corpus this
/// toolkit is usually pointed at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationSchema {
    pub id_col: String,
    pub text_col: String,
    pub score_col: String,
    pub threshold: f64,
}

impl Default for ClassificationSchema {
    fn default() -> Self {
        ClassificationSchema {
            id_col: "id".into(),
            text_col: "comment_text".into(),
            score_col: "target".into(),
            threshold: 0.5,
        }
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::from_csv(path, e))
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn load_posts(path: &Path, require_spans: bool) -> Result<Vec<Post>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::from_csv(path, e))?
        .clone();
    let text_idx = column_index(&headers, TEXT_COLUMN).ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        message: format!("missing required column {TEXT_COLUMN:?}"),
    })?;
    let spans_idx = column_index(&headers, SPANS_COLUMN);
    if require_spans && spans_idx.is_none() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing required column {SPANS_COLUMN:?}"),
        });
    }
    let id_idx = column_index(&headers, ID_COLUMN);

    let mut posts = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::from_csv(path, e))?;
        let line = record_line(&record);
        let id = match id_idx {
            Some(i) => record.get(i).unwrap_or("").to_string(),
            None => row.to_string(),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate post id {id:?}"),
            });
        }
        let text = record.get(text_idx).unwrap_or("").to_string();
        let gold = match spans_idx {
            Some(i) => {
                let raw = record.get(i).unwrap_or("");
                Some(parse_spans_field(raw).map_err(|e| Error::Record {
                    path: path.to_path_buf(),
                    line,
                    message: format!("spans column: {e}"),
                })?)
            }
            None => None,
        };
        let post = Post::new(id, text, gold).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        posts.push(post);
    }
    Ok(posts)
}

/// Load a span-annotated corpus; the `spans` column is required and every
/// offset is validated against the text length.
pub fn load_span_corpus(path: &Path) -> Result<Vec<Post>> {
    load_posts(path, true)
}

/// Load a corpus for prediction: like [`load_span_corpus`], but a missing
/// `spans` column leaves the posts unannotated instead of failing.
pub fn load_text_corpus(path: &Path) -> Result<Vec<Post>> {
    load_posts(path, false)
}

/// Render an offset set the way corpus and submission files carry it.
pub fn render_offsets(spans: &SpanSet) -> String {
    let parts: Vec<String> = spans.iter().map(|o| o.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Write an annotated corpus with `id`, `spans` and `text` columns.
/// Every post must carry gold spans.
pub fn write_span_corpus(path: &Path, posts: &[Post]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::from_csv(path, e))?;
    writer
        .write_record([ID_COLUMN, SPANS_COLUMN, TEXT_COLUMN])
        .map_err(|e| Error::from_csv(path, e))?;
    for post in posts {
        let gold = post.gold().ok_or_else(|| {
            Error::invalid(format!(
                "post {:?} has no gold spans; only annotated corpora can be written",
                post.id()
            ))
        })?;
        writer
            .write_record([post.id(), &render_offsets(gold), post.text()])
            .map_err(|e| Error::from_csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Load a classification corpus under a [`ClassificationSchema`].
pub fn load_classification_corpus(
    path: &Path,
    schema: &ClassificationSchema,
) -> Result<Vec<LabeledText>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::from_csv(path, e))?
        .clone();
    let idx = |name: &str| -> Result<usize> {
        column_index(&headers, name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("no column {name:?}; available: {headers:?}"),
        })
    };
    let id_idx = idx(&schema.id_col)?;
    let text_idx = idx(&schema.text_col)?;
    let score_idx = idx(&schema.score_col)?;

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::from_csv(path, e))?;
        let line = record_line(&record);
        let raw_score = record.get(score_idx).unwrap_or("");
        let score: f64 = raw_score.parse().map_err(|_| Error::Record {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse toxicity score {raw_score:?}"),
        })?;
        let labeled = LabeledText::new(
            record.get(id_idx).unwrap_or("").to_string(),
            record.get(text_idx).unwrap_or("").to_string(),
            score,
            schema.threshold,
        )
        .map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        records.push(labeled);
    }
    Ok(records)
}

/// Key of one prediction record: `(post_id, model_id)`.
pub type PredKey = (String, String);

#[derive(Deserialize)]
struct PredRecord {
    post_id: String,
    model_id: String,
    tokens: Vec<(usize, usize, f64)>,
}

/// Read one predictions file (JSON object per line) into `out`, validating
/// each record against the known corpus texts.
pub fn load_predictions_file(
    path: &Path,
    text_chars_by_post: &BTreeMap<String, usize>,
    out: &mut BTreeMap<PredKey, TokenPrediction>,
) -> Result<()> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let record_err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PredRecord =
            serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        let chars = *text_chars_by_post
            .get(&raw.post_id)
            .ok_or_else(|| record_err(format!("unknown post id {:?}", raw.post_id)))?;
        let key = (raw.post_id.clone(), raw.model_id.clone());
        let pred = TokenPrediction::new(raw.post_id, raw.model_id, raw.tokens)
            .map_err(|e| record_err(e.to_string()))?;
        // extents are sorted once validated, so checking the last suffices
        if let Some(&(_, end, _)) = pred.tokens().last() {
            if end > chars {
                return Err(record_err(format!(
                    "token extent ends at {end} but post {:?} has {chars} characters",
                    key.0
                )));
            }
        }
        if out.insert(key.clone(), pred).is_some() {
            return Err(record_err(format!(
                "duplicate prediction for post {:?} from model {:?}",
                key.0, key.1
            )));
        }
    }
    Ok(())
}

/// Read every `*.jsonl` file in a directory, in file-name order.
pub fn load_predictions_dir(
    dir: &Path,
    text_chars_by_post: &BTreeMap<String, usize>,
) -> Result<BTreeMap<PredKey, TokenPrediction>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    paths.sort();

    let mut out = BTreeMap::new();
    for path in paths {
        load_predictions_file(&path, text_chars_by_post, &mut out)?;
    }
    Ok(out)
}

/// Write predictions as one JSON object per line.
pub fn write_predictions<'a>(
    path: &Path,
    preds: impl IntoIterator<Item = &'a TokenPrediction>,
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for pred in preds {
        let line = serde_json::to_string(pred)
            .map_err(|e| Error::invalid(format!("cannot serialize prediction: {e}")))?;
        writeln!(writer, "{line}").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}

/// Write decoded spans in the submission shape: per line, the post id, a
/// tab, and the bracketed sorted offset list.
pub fn write_spans_file<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a SpanSet)>,
) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for (post_id, spans) in rows {
        writeln!(writer, "{post_id}\t{}", render_offsets(spans)).map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}

/// Read a submission-shaped spans file back into per-post offset sets.
pub fn load_spans_file(path: &Path) -> Result<BTreeMap<String, SpanSet>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let record_err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (post_id, rest) = line
            .split_once('\t')
            .ok_or_else(|| record_err("expected <post_id>\\t<offsets>".into()))?;
        let spans = parse_spans_field(rest).map_err(|e| record_err(e.to_string()))?;
        if out.insert(post_id.to_string(), spans).is_some() {
            return Err(record_err(format!("duplicate post id {post_id:?}")));
        }
    }
    Ok(out)
}

/// Pretty-printed JSON artifact writer; output is deterministic for a given
/// value (maps are ordered).
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialize artifact: {e}")))?;
    fs::write(path, body + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Index post texts by id for prediction validation.
pub fn text_chars_index(posts: &[Post]) -> BTreeMap<String, usize> {
    posts
        .iter()
        .map(|p| (p.id().to_string(), p.char_len()))
        .collect()
}
