//! Core records for answer-localization samples and the corpus file format.
//!
//! A corpus file is UTF-8 JSON lines, one [`Sample`] per line. Times are
//! seconds on the continuous axis `[0, duration_k]`; frame `t` is the unit
//! bucket `[t, t + 1)`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Default vocabulary size for integer token ids.
pub const DEFAULT_VOCAB_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpan {
    pub start: f64,
    pub end: f64,
}

impl FrameSpan {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Span covering frame buckets `first..=last`.
    pub fn from_buckets(first: usize, last: usize) -> Self {
        Self::new(first as f64, (last + 1) as f64)
    }
}

/// Inclusive token-index interval over the concatenated text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpan {
    pub start_tok: usize,
    pub end_tok: usize,
}

impl TokenSpan {
    pub fn new(start_tok: usize, end_tok: usize) -> Self {
        debug_assert!(start_tok <= end_tok);
        Self { start_tok, end_tok }
    }

    pub fn len(&self) -> usize {
        self.end_tok - self.start_tok + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, tok: usize) -> bool {
        self.start_tok <= tok && tok <= self.end_tok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subtitle {
    pub start_sec: f64,
    pub end_sec: f64,
    pub token_ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub duration_k: usize,
    /// `duration_k` rows of `d_in` features, one per second.
    pub video_features: Vec<Vec<f64>>,
    pub subtitles: Vec<Subtitle>,
    pub question_tokens: Vec<TokenId>,
    pub answer_frames: FrameSpan,
}

impl Sample {
    pub fn d_in(&self) -> usize {
        self.video_features.first().map_or(0, Vec::len)
    }

    /// Question tokens followed by every subtitle's tokens in order.
    pub fn token_ids(&self) -> Vec<TokenId> {
        let mut ids = self.question_tokens.clone();
        for sub in &self.subtitles {
            ids.extend_from_slice(&sub.token_ids);
        }
        ids
    }

    pub fn max_token_id(&self) -> Option<TokenId> {
        self.question_tokens
            .iter()
            .chain(self.subtitles.iter().flat_map(|s| s.token_ids.iter()))
            .copied()
            .max()
    }
}

/// A single broken invariant reported by [`validate_sample`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDuration,
    FeatureRowCount { expected: usize, got: usize },
    RaggedFeatures { row: usize },
    NonFiniteFeature { row: usize },
    AnswerInverted,
    AnswerNegative,
    AnswerExceedsDuration,
    SubtitleInverted { index: usize },
    SubtitleOutOfRange { index: usize },
    SubtitleEmpty { index: usize },
    SubtitlesOverlap { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDuration => write!(f, "duration_k must be at least 1"),
            Violation::FeatureRowCount { expected, got } => {
                write!(f, "video_features has {got} rows, expected {expected}")
            }
            Violation::RaggedFeatures { row } => {
                write!(f, "video_features row {row} has a different width")
            }
            Violation::NonFiniteFeature { row } => {
                write!(f, "video_features row {row} contains a non-finite value")
            }
            Violation::AnswerInverted => write!(f, "answer start after answer end"),
            Violation::AnswerNegative => write!(f, "answer starts before 0"),
            Violation::AnswerExceedsDuration => write!(f, "answer exceeds duration"),
            Violation::SubtitleInverted { index } => {
                write!(f, "subtitle {index} has end_sec <= start_sec")
            }
            Violation::SubtitleOutOfRange { index } => {
                write!(f, "subtitle {index} lies outside [0, duration_k]")
            }
            Violation::SubtitleEmpty { index } => write!(f, "subtitle {index} has no tokens"),
            Violation::SubtitlesOverlap { first, second } => {
                write!(f, "subtitles overlap ({first} and {second})")
            }
        }
    }
}

/// Returns every violated invariant; an empty list means the sample is valid.
// Negated comparisons also reject NaN endpoints.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate_sample(s: &Sample) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = s.duration_k as f64;
    if s.duration_k == 0 {
        out.push(Violation::ZeroDuration);
    }
    if s.video_features.len() != s.duration_k {
        out.push(Violation::FeatureRowCount {
            expected: s.duration_k,
            got: s.video_features.len(),
        });
    }
    let width = s.d_in();
    for (row, feats) in s.video_features.iter().enumerate() {
        if feats.len() != width {
            out.push(Violation::RaggedFeatures { row });
        } else if feats.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteFeature { row });
        }
    }

    let a = s.answer_frames;
    if !(a.start <= a.end) {
        out.push(Violation::AnswerInverted);
    }
    if !(a.start >= 0.0) {
        out.push(Violation::AnswerNegative);
    }
    if !(a.end <= k) {
        out.push(Violation::AnswerExceedsDuration);
    }

    for (index, sub) in s.subtitles.iter().enumerate() {
        if !(sub.start_sec < sub.end_sec) {
            out.push(Violation::SubtitleInverted { index });
        }
        if !(sub.start_sec >= 0.0 && sub.end_sec <= k) {
            out.push(Violation::SubtitleOutOfRange { index });
        }
        if sub.token_ids.is_empty() {
            out.push(Violation::SubtitleEmpty { index });
        }
        if index > 0 && sub.start_sec < s.subtitles[index - 1].end_sec {
            out.push(Violation::SubtitlesOverlap {
                first: index - 1,
                second: index,
            });
        }
    }
    out
}

/// Position map of the concatenated text `[Q, T_1, ..., T_r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub n: usize,
    /// `None` for question tokens, otherwise the owning subtitle index.
    pub token_to_subtitle: Vec<Option<usize>>,
    pub subtitle_token_range: Vec<TokenSpan>,
}

impl TokenLayout {
    pub fn question_len(&self) -> usize {
        self.token_to_subtitle.iter().take_while(|x| x.is_none()).count()
    }

    /// True on subtitle tokens, false on question tokens.
    pub fn text_mask(&self) -> Vec<bool> {
        self.token_to_subtitle.iter().map(Option::is_some).collect()
    }
}

pub fn token_layout(s: &Sample) -> TokenLayout {
    let q = s.question_tokens.len();
    let mut token_to_subtitle = vec![None; q];
    let mut ranges = Vec::with_capacity(s.subtitles.len());
    let mut pos = q;
    for (i, sub) in s.subtitles.iter().enumerate() {
        let len = sub.token_ids.len();
        ranges.push(TokenSpan::new(pos, pos + len - 1));
        token_to_subtitle.extend(std::iter::repeat_n(Some(i), len));
        pos += len;
    }
    TokenLayout {
        n: pos,
        token_to_subtitle,
        subtitle_token_range: ranges,
    }
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            return Err(Error::Validation {
                id: sample.id,
                violations,
            });
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &[Sample]) -> std::io::Result<()> {
    for s in corpus {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file))
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), corpus).map_err(|e| Error::io(path, e))
}
