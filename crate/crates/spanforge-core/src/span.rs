//! Character-offset span algebra.
//!
//! The unit of annotation is a set of character offsets ([`SpanSet`]), viewed
//! either directly, as maximal contiguous [`Interval`]s, or projected onto
//! tokens. Offsets index Unicode scalar values, never bytes: byte indexing
//! would corrupt spans in non-ASCII posts.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// A set of character offsets, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(from = "Vec<usize>", into = "Vec<usize>")
)]
pub struct SpanSet {
    offsets: Vec<usize>,
}

impl SpanSet {
    pub fn new() -> Self {
        SpanSet::default()
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.offsets.binary_search(&offset).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.offsets
    }

    pub fn max(&self) -> Option<usize> {
        self.offsets.last().copied()
    }

    /// Size of the intersection, by a linear merge of the sorted offsets.
    pub fn intersection_count(&self, other: &SpanSet) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        let (a, b) = (&self.offsets, &other.offsets);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }

    pub fn union(&self, other: &SpanSet) -> SpanSet {
        self.iter().chain(other.iter()).collect()
    }

    pub fn is_subset(&self, other: &SpanSet) -> bool {
        self.intersection_count(other) == self.len()
    }

    /// Count of offsets falling in the half-open extent `[start, end)`.
    pub fn count_in_extent(&self, start: usize, end: usize) -> usize {
        let lo = self.offsets.partition_point(|&o| o < start);
        let hi = self.offsets.partition_point(|&o| o < end);
        hi - lo
    }
}

impl From<Vec<usize>> for SpanSet {
    fn from(mut offsets: Vec<usize>) -> Self {
        offsets.sort_unstable();
        offsets.dedup();
        SpanSet { offsets }
    }
}

impl From<SpanSet> for Vec<usize> {
    fn from(s: SpanSet) -> Self {
        s.offsets
    }
}

impl FromIterator<usize> for SpanSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SpanSet::from(iter.into_iter().collect::<Vec<_>>())
    }
}

/// A contiguous half-open character range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    /// Requires `start < end`.
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start < end, "interval start must precede end");
        Interval { start, end }
    }

    /// Number of offsets covered; never zero.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start
    }
}

/// A token with its half-open character extent inside the post.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub index: usize,
}

impl TokenSpan {
    pub fn extent(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

/// How gold character spans turn into binary token labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum LabelPolicy {
    /// Token is positive if any of its characters is in the gold set.
    /// The default: gold annotations may start or end mid-word, and this is
    /// the only policy that never drops such spans entirely.
    #[default]
    #[cfg_attr(feature = "serde", serde(rename = "any"))]
    AnyOverlap,
    /// Positive if more than half of the token's characters are gold.
    #[cfg_attr(feature = "serde", serde(rename = "majority"))]
    MajorityOverlap,
    /// Positive only if every character of the token is gold.
    #[cfg_attr(feature = "serde", serde(rename = "full"))]
    FullContainment,
}

impl LabelPolicy {
    pub fn parse(s: &str) -> Option<LabelPolicy> {
        match s {
            "any" => Some(LabelPolicy::AnyOverlap),
            "majority" => Some(LabelPolicy::MajorityOverlap),
            "full" => Some(LabelPolicy::FullContainment),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelPolicy::AnyOverlap => "any",
            LabelPolicy::MajorityOverlap => "majority",
            LabelPolicy::FullContainment => "full",
        }
    }
}

/// Token values did not line up with token extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentError {
    pub expected: usize,
    pub got: usize,
}

impl fmt::Display for AlignmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "expected {} per-token values, got {}",
            self.expected, self.got
        )
    }
}

impl core::error::Error for AlignmentError {}

/// Collapse an offset set into its maximal contiguous runs, sorted.
pub fn offsets_to_intervals(spans: &SpanSet) -> Vec<Interval> {
    let mut intervals = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for offset in spans.iter() {
        match run {
            Some((start, end)) if offset == end => run = Some((start, end + 1)),
            Some((start, end)) => {
                intervals.push(Interval::new(start, end));
                run = Some((offset, offset + 1));
            }
            None => run = Some((offset, offset + 1)),
        }
    }
    if let Some((start, end)) = run {
        intervals.push(Interval::new(start, end));
    }
    intervals
}

/// Union of `[start, end)` ranges as an offset set. Intervals may overlap.
pub fn intervals_to_offsets(intervals: &[Interval]) -> SpanSet {
    intervals.iter().flat_map(|iv| iv.start..iv.end).collect()
}

#[derive(PartialEq, Clone, Copy)]
enum CharKind {
    Word,
    Other,
}

fn char_kind(c: char) -> Option<CharKind> {
    if c.is_whitespace() {
        None
    } else if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
        Some(CharKind::Word)
    } else {
        Some(CharKind::Other)
    }
}

/// Split `text` into tokens carrying character extents.
///
/// A token is either a maximal run of letters, digits and apostrophes, or a
/// maximal run of other non-whitespace characters. Every non-whitespace
/// character belongs to exactly one token, so concatenating token texts with
/// the skipped whitespace reconstructs the input.
pub fn tokenize_with_offsets(text: &str) -> Vec<TokenSpan> {
    let mut tokens = Vec::new();
    let mut current: Option<(CharKind, usize, String)> = None;

    let flush = |cur: &mut Option<(CharKind, usize, String)>, tokens: &mut Vec<TokenSpan>| {
        if let Some((_, start, text)) = cur.take() {
            let len = text.chars().count();
            tokens.push(TokenSpan {
                index: tokens.len(),
                end: start + len,
                start,
                text,
            });
        }
    };

    for (i, c) in text.chars().enumerate() {
        match char_kind(c) {
            None => flush(&mut current, &mut tokens),
            Some(kind) => match &mut current {
                Some((k, _, buf)) if *k == kind => buf.push(c),
                _ => {
                    flush(&mut current, &mut tokens);
                    let mut buf = String::new();
                    buf.push(c);
                    current = Some((kind, i, buf));
                }
            },
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Binary labels for raw extents under a [`LabelPolicy`].
pub fn project_extents_to_labels(
    extents: &[(usize, usize)],
    gold: &SpanSet,
    policy: LabelPolicy,
) -> Vec<bool> {
    extents
        .iter()
        .map(|&(start, end)| {
            let overlap = gold.count_in_extent(start, end);
            let len = end.saturating_sub(start);
            match policy {
                LabelPolicy::AnyOverlap => overlap > 0,
                LabelPolicy::MajorityOverlap => 2 * overlap > len,
                LabelPolicy::FullContainment => len > 0 && overlap == len,
            }
        })
        .collect()
}

/// Binary labels for a post's tokens under a [`LabelPolicy`].
pub fn project_spans_to_token_labels(
    tokens: &[TokenSpan],
    gold: &SpanSet,
    policy: LabelPolicy,
) -> Vec<bool> {
    let extents: Vec<(usize, usize)> = tokens.iter().map(TokenSpan::extent).collect();
    project_extents_to_labels(&extents, gold, policy)
}

/// Assemble an offset set from per-extent values.
///
/// An extent is selected when its value is `>= threshold` (binary labels are
/// passed as 0/1). With `gap_fill`, the characters strictly between two
/// consecutive selected extents are included as well, but only when that gap
/// is pure whitespace in `text`; punctuation gaps are never bridged.
pub fn assemble_spans(
    text: &str,
    extents: &[(usize, usize)],
    values: &[f64],
    threshold: f64,
    gap_fill: bool,
) -> Result<SpanSet, AlignmentError> {
    if extents.len() != values.len() {
        return Err(AlignmentError {
            expected: extents.len(),
            got: values.len(),
        });
    }
    let chars: Vec<char> = if gap_fill { text.chars().collect() } else { Vec::new() };
    let mut offsets = Vec::new();
    let mut prev_end: Option<usize> = None;
    for (&(start, end), &value) in extents.iter().zip(values) {
        if value < threshold {
            continue;
        }
        if gap_fill {
            if let Some(pe) = prev_end {
                if pe < start
                    && start <= chars.len()
                    && chars[pe..start].iter().all(|c| c.is_whitespace())
                {
                    offsets.extend(pe..start);
                }
            }
        }
        offsets.extend(start..end);
        prev_end = Some(end);
    }
    Ok(SpanSet::from(offsets))
}

/// Assemble an offset set from per-token values. See [`assemble_spans`].
pub fn token_labels_to_offsets(
    text: &str,
    tokens: &[TokenSpan],
    values: &[f64],
    threshold: f64,
    gap_fill: bool,
) -> Result<SpanSet, AlignmentError> {
    let extents: Vec<(usize, usize)> = tokens.iter().map(TokenSpan::extent).collect();
    assemble_spans(text, &extents, values, threshold, gap_fill)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const EXAMPLE: &str = "This is a stupid example, so thank you for nothing a!@#!@";

    fn set(offsets: impl IntoIterator<Item = usize>) -> SpanSet {
        offsets.into_iter().collect()
    }

    #[test]
    fn offsets_to_intervals_example() {
        let s = set((10..16).chain(51..57));
        assert_eq!(
            offsets_to_intervals(&s),
            vec![Interval::new(10, 16), Interval::new(51, 57)]
        );
    }

    #[test]
    fn offsets_to_intervals_empty_and_singleton() {
        assert!(offsets_to_intervals(&SpanSet::new()).is_empty());
        assert_eq!(
            offsets_to_intervals(&set([3])),
            vec![Interval::new(3, 4)]
        );
    }

    #[test]
    fn intervals_to_offsets_inverse() {
        let ivs = vec![Interval::new(10, 16), Interval::new(51, 57)];
        assert_eq!(intervals_to_offsets(&ivs), set((10..16).chain(51..57)));
    }

    #[test]
    fn intervals_to_offsets_overlap_union() {
        let ivs = vec![Interval::new(0, 2), Interval::new(1, 3)];
        assert_eq!(intervals_to_offsets(&ivs), set([0, 1, 2]));
        assert_eq!(intervals_to_offsets(&[]), SpanSet::new());
    }

    #[test]
    fn tokenize_finds_stupid_at_expected_extent() {
        let tokens = tokenize_with_offsets(EXAMPLE);
        let stupid = tokens.iter().find(|t| t.text == "stupid").unwrap();
        assert_eq!((stupid.start, stupid.end), (10, 16));
    }

    #[test]
    fn tokenize_splits_trailing_junk() {
        let tokens = tokenize_with_offsets(EXAMPLE);
        let n = tokens.len();
        assert_eq!(tokens[n - 2].text, "a");
        assert_eq!(tokens[n - 2].extent(), (51, 52));
        assert_eq!(tokens[n - 1].text, "!@#!@");
        assert_eq!(tokens[n - 1].extent(), (52, 57));
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize_with_offsets("").is_empty());
    }

    #[test]
    fn tokenize_invariants_hold() {
        let text = "héllo, wörld! it's  naïve… 数字123";
        let tokens = tokenize_with_offsets(text);
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        for t in &tokens {
            assert_eq!(t.end - t.start, t.text.chars().count());
            let slice: String = chars[t.start..t.end].iter().collect();
            assert_eq!(slice, t.text);
            for i in t.start..t.end {
                assert!(!covered[i], "offset {i} covered twice");
                covered[i] = true;
            }
        }
        for (i, c) in chars.iter().enumerate() {
            assert_eq!(covered[i], !c.is_whitespace());
        }
    }

    #[test]
    fn project_mid_word_gold_hits_both_words() {
        // Gold runs from inside "who" to inside "obviously".
        let text = "who obviously";
        let tokens = tokenize_with_offsets(text);
        let gold = set(1..7); // "ho obv"
        let labels = project_spans_to_token_labels(&tokens, &gold, LabelPolicy::AnyOverlap);
        assert_eq!(labels, vec![true, true]);
    }

    #[test]
    fn project_empty_gold_all_negative() {
        let tokens = tokenize_with_offsets("nothing here");
        let labels =
            project_spans_to_token_labels(&tokens, &SpanSet::new(), LabelPolicy::AnyOverlap);
        assert!(labels.iter().all(|&l| !l));
    }

    #[test]
    fn project_policies_differ_on_partial_overlap() {
        // Gold covers 2 of the 6 characters of "stupid".
        let tokens = tokenize_with_offsets("stupid");
        let gold = set([0, 1]);
        let any = project_spans_to_token_labels(&tokens, &gold, LabelPolicy::AnyOverlap);
        let maj = project_spans_to_token_labels(&tokens, &gold, LabelPolicy::MajorityOverlap);
        let full = project_spans_to_token_labels(&tokens, &gold, LabelPolicy::FullContainment);
        assert_eq!((any[0], maj[0], full[0]), (true, false, false));
    }

    #[test]
    fn assemble_bridges_whitespace_gap() {
        let text = "uhhh Hillary Clinton is a serial killer and thief";
        let extents = [(26, 32), (33, 39)];
        let values = [1.0, 1.0];
        let spans = assemble_spans(text, &extents, &values, 0.5, true).unwrap();
        assert_eq!(spans, set(26..39));
    }

    #[test]
    fn assemble_without_gap_fill_leaves_gap() {
        let text = "uhhh Hillary Clinton is a serial killer and thief";
        let extents = [(26, 32), (33, 39)];
        let values = [1.0, 1.0];
        let spans = assemble_spans(text, &extents, &values, 0.5, false).unwrap();
        assert_eq!(spans, set((26..32).chain(33..39)));
    }

    #[test]
    fn assemble_does_not_bridge_punctuation() {
        let text = "bad, worse";
        let extents = [(0, 3), (5, 10)];
        let values = [1.0, 1.0];
        let spans = assemble_spans(text, &extents, &values, 0.5, true).unwrap();
        assert_eq!(spans, set((0..3).chain(5..10)));
    }

    #[test]
    fn assemble_skips_gap_after_unselected_token() {
        let text = "aa bb cc";
        let extents = [(0, 2), (3, 5), (6, 8)];
        let values = [1.0, 0.0, 1.0];
        let spans = assemble_spans(text, &extents, &values, 0.5, true).unwrap();
        // "bb" is unselected, so the region between "aa" and "cc" is not pure
        // whitespace and must not be bridged.
        assert_eq!(spans, set((0..2).chain(6..8)));
    }

    #[test]
    fn assemble_nothing_selected() {
        let spans = assemble_spans("abc", &[(0, 3)], &[0.2], 0.5, true).unwrap();
        assert!(spans.is_empty());
    }

    #[test]
    fn assemble_rejects_misaligned_values() {
        let err = assemble_spans("abc", &[(0, 3)], &[0.2, 0.7], 0.5, false).unwrap_err();
        assert_eq!(err, AlignmentError { expected: 1, got: 2 });
    }

    #[test]
    fn lower_threshold_never_removes_offsets() {
        let text = "one two three four";
        let tokens = tokenize_with_offsets(text);
        let values = [0.2, 0.5, 0.7, 0.9];
        let mut prev = SpanSet::new();
        for &t in &[0.95, 0.7, 0.5, 0.2, 0.0] {
            let cur = token_labels_to_offsets(text, &tokens, &values, t, true).unwrap();
            assert!(prev.is_subset(&cur));
            prev = cur;
        }
    }

    #[test]
    fn projection_roundtrip_is_superset_of_gold() {
        let text = "And you are a complete moron who obviously doesn't know";
        let tokens = tokenize_with_offsets(text);
        let gold = set((23..28).chain(30..36)); // "moron" and a mid-word slice
        let labels = project_spans_to_token_labels(&tokens, &gold, LabelPolicy::AnyOverlap);
        let values: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let decoded = token_labels_to_offsets(text, &tokens, &values, 0.5, false).unwrap();
        let non_ws_gold: SpanSet = {
            let chars: Vec<char> = text.chars().collect();
            gold.iter().filter(|&o| !chars[o].is_whitespace()).collect()
        };
        assert!(non_ws_gold.is_subset(&decoded));
    }
}
