//! Shared fixtures: a planted-lexicon corpus generator and an independent
//! oracle that tags exactly the planted words.
#![allow(dead_code)] // each test binary uses a different subset

use std::path::Path;

use spanforge_core::corpus::Post;
use spanforge_core::rng::SeededRng;
use spanforge_core::span::SpanSet;

pub const BENIGN_WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "and", "then", "some",
    "more", "words", "fill", "this", "post", "nicely", "today", "again", "maybe", "truly",
    "happy", "calm", "green", "river", "stone", "cloud", "light", "table", "garden", "window",
    "coffee", "music", "quiet", "simple", "honest", "gentle", "bright", "slow", "warm",
];

pub const TOXIC_WORDS: &[&str] = &[
    "grontle", "plaxik", "vorbun", "snerf", "quablo", "drimzo", "flarp", "wexid", "brunta",
    "zilcho",
];

/// Posts whose toxicity is exactly membership in [`TOXIC_WORDS`]. Words are
/// joined by single spaces and planted words are never adjacent, so the gold
/// spans are plain word extents.
pub fn planted_posts(n: usize, seed: u64, id_prefix: &str) -> Vec<Post> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let len = 8 + rng.gen_range(9);
            let mut text = String::new();
            let mut gold: Vec<usize> = Vec::new();
            let mut prev_toxic = true; // keeps position 0 benign
            for j in 0..len {
                if j > 0 {
                    text.push(' ');
                }
                let toxic = !prev_toxic && rng.next_f64() < 0.18;
                let word = if toxic {
                    TOXIC_WORDS[rng.gen_range(TOXIC_WORDS.len())]
                } else {
                    BENIGN_WORDS[rng.gen_range(BENIGN_WORDS.len())]
                };
                let start = text.chars().count();
                text.push_str(word);
                if toxic {
                    gold.extend(start..start + word.chars().count());
                }
                prev_toxic = toxic;
            }
            Post::new(format!("{id_prefix}{i}"), text, Some(SpanSet::from(gold))).unwrap()
        })
        .collect()
}

/// Independent span oracle: scan for planted words by splitting on spaces,
/// without the toolkit tokenizer or any model.
pub fn oracle_spans(text: &str) -> SpanSet {
    let mut offsets = Vec::new();
    let mut start = 0usize;
    for chunk in text.split(' ') {
        let len = chunk.chars().count();
        if TOXIC_WORDS.contains(&chunk) {
            offsets.extend(start..start + len);
        }
        start += len + 1;
    }
    SpanSet::from(offsets)
}

/// A classification corpus whose scores mirror the planted lexicon, written
/// under a custom schema. The first rows repeat span-corpus texts verbatim
/// so the leakage filter has something to remove.
pub fn write_classification_csv(path: &Path, span_posts: &[Post], n: usize, seed: u64) {
    let mut rng = SeededRng::new(seed);
    let mut writer = csv::Writer::from_path(path).unwrap();
    writer.write_record(["rowid", "body", "tox"]).unwrap();
    for (i, post) in span_posts.iter().take(5).enumerate() {
        let score = if oracle_spans(post.text()).is_empty() { "0.1" } else { "0.9" };
        writer
            .write_record([&format!("leak{i}"), post.text(), score])
            .unwrap();
    }
    for i in 0..n {
        let len = 5 + rng.gen_range(8);
        let toxic_post = rng.next_f64() < 0.4;
        let mut words = Vec::new();
        for j in 0..len {
            if toxic_post && j == len / 2 {
                words.push(TOXIC_WORDS[rng.gen_range(TOXIC_WORDS.len())]);
            } else {
                words.push(BENIGN_WORDS[rng.gen_range(BENIGN_WORDS.len())]);
            }
        }
        let score = if toxic_post { 0.85 } else { 0.12 };
        writer
            .write_record([&format!("c{i}"), &words.join(" "), &score.to_string()])
            .unwrap();
    }
    writer.flush().unwrap();
}
