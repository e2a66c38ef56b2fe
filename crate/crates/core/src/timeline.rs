//! Subtitle timeline look-up table and span algebra.
//!
//! The table maps subtitle indices to time intervals and token ranges, which
//! is what lets a frame-level prediction become a token-level target and the
//! other way round. Interval IoU lives here as well, in two flavours: a
//! continuous one over seconds and a discrete one over inclusive index sets.

use serde::{Deserialize, Serialize};

use crate::data::{FrameSpan, Sample, TokenLayout, TokenSpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub index: usize,
    pub start_sec: f64,
    pub end_sec: f64,
    pub tokens: TokenSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineTable {
    pub entries: Vec<TimelineEntry>,
    pub duration_k: usize,
}

/// Inclusive interval of subtitle indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubtitleSpan {
    pub start_idx: usize,
    pub end_idx: usize,
}

impl SubtitleSpan {
    pub fn new(start_idx: usize, end_idx: usize) -> Self {
        debug_assert!(start_idx <= end_idx);
        Self { start_idx, end_idx }
    }
}

/// An inclusive integer interval; implemented by both index span kinds so
/// [`index_iou`] only ever compares like with like.
pub trait IndexInterval {
    fn bounds(&self) -> (usize, usize);
}

impl IndexInterval for SubtitleSpan {
    fn bounds(&self) -> (usize, usize) {
        (self.start_idx, self.end_idx)
    }
}

impl IndexInterval for TokenSpan {
    fn bounds(&self) -> (usize, usize) {
        (self.start_tok, self.end_tok)
    }
}

impl TimelineTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry(&self, idx: usize) -> Result<&TimelineEntry> {
        self.entries.get(idx).ok_or(Error::IndexOutOfRange {
            index: idx,
            len: self.entries.len(),
        })
    }
}

pub fn build_table(s: &Sample, layout: &TokenLayout) -> TimelineTable {
    let entries = s
        .subtitles
        .iter()
        .zip(&layout.subtitle_token_range)
        .enumerate()
        .map(|(index, (sub, &tokens))| TimelineEntry {
            index,
            start_sec: sub.start_sec,
            end_sec: sub.end_sec,
            tokens,
        })
        .collect();
    TimelineTable {
        entries,
        duration_k: s.duration_k,
    }
}

/// Intersection over union of two intervals on the continuous time axis.
pub fn temporal_iou(a: FrameSpan, b: FrameSpan) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection over union of two inclusive integer index sets.
pub fn index_iou<S: IndexInterval>(a: &S, b: &S) -> f64 {
    let (a0, a1) = a.bounds();
    let (b0, b1) = b.bounds();
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    let inter = if lo <= hi { hi - lo + 1 } else { 0 };
    let union = (a1 - a0 + 1) + (b1 - b0 + 1) - inter;
    inter as f64 / union as f64
}

/// First index minimizing `key`; ties go to the smaller index.
fn argmin_by(entries: &[TimelineEntry], key: impl Fn(&TimelineEntry) -> f64) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let v = key(e);
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn frame_to_subtitle(span: FrameSpan, tbl: &TimelineTable) -> Result<SubtitleSpan> {
    if tbl.is_empty() {
        return Err(Error::EmptyTable);
    }
    let e = &tbl.entries;
    let start = argmin_by(e, |x| (span.start - x.start_sec).abs());
    let end = argmin_by(e, |x| (span.end - x.end_sec).abs());
    if start <= end {
        return Ok(SubtitleSpan::new(start, end));
    }

    // Gapped subtitles can pull the end boundary before the start one.
    let overlap = |x: &TimelineEntry| (span.end.min(x.end_sec) - span.start.max(x.start_sec)).max(0.0);
    let best = argmin_by(e, |x| -overlap(x));
    let idx = if overlap(&e[best]) > 0.0 {
        best
    } else {
        let mid = 0.5 * (span.start + span.end);
        argmin_by(e, |x| (mid - 0.5 * (x.start_sec + x.end_sec)).abs())
    };
    Ok(SubtitleSpan::new(idx, idx))
}

pub fn subtitle_to_frame(span: SubtitleSpan, tbl: &TimelineTable) -> Result<FrameSpan> {
    let first = tbl.entry(span.start_idx)?;
    let last = tbl.entry(span.end_idx)?;
    Ok(FrameSpan::new(first.start_sec, last.end_sec))
}

pub fn token_span_of_subtitles(span: SubtitleSpan, tbl: &TimelineTable) -> Result<TokenSpan> {
    let first = tbl.entry(span.start_idx)?;
    let last = tbl.entry(span.end_idx)?;
    Ok(TokenSpan::new(first.tokens.start_tok, last.tokens.end_tok))
}

fn subtitle_of_token(tok: usize, tbl: &TimelineTable) -> Result<usize> {
    let i = tbl.entries.partition_point(|e| e.tokens.end_tok < tok);
    match tbl.entries.get(i) {
        Some(e) if e.tokens.contains(tok) => Ok(i),
        _ => Err(Error::QuestionToken(tok)),
    }
}

pub fn subtitle_span_of_tokens(span: TokenSpan, tbl: &TimelineTable) -> Result<SubtitleSpan> {
    let s = subtitle_of_token(span.start_tok, tbl)?;
    let e = subtitle_of_token(span.end_tok, tbl)?;
    Ok(SubtitleSpan::new(s, e))
}

/// Frame buckets `(first, last)` touched by a time span on a `k`-second video.
pub fn frame_buckets(span: FrameSpan, k: usize) -> (usize, usize) {
    let last_bucket = k.saturating_sub(1);
    let first = (span.start.max(0.0).floor() as usize).min(last_bucket);
    let last = ((span.end.ceil() as isize - 1).max(0) as usize).min(last_bucket);
    (first, last.max(first))
}

/// Supervision targets for both predictors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    /// Start and end frame indices.
    pub frames: (usize, usize),
    /// Absent when the sample has no subtitles.
    pub tokens: Option<TokenSpan>,
}

pub fn ground_truth_targets(s: &Sample, tbl: &TimelineTable) -> GroundTruth {
    let frames = frame_buckets(s.answer_frames, s.duration_k);
    let tokens = frame_to_subtitle(s.answer_frames, tbl)
        .and_then(|sub| token_span_of_subtitles(sub, tbl))
        .ok();
    GroundTruth { frames, tokens }
}

pub const IOU_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percentage of samples with IoU at least 0.3, 0.5 and 0.7.
    pub iou_at: [f64; 3],
    pub miou: f64,
    pub per_sample_iou: Vec<f64>,
}

impl MetricsReport {
    pub fn iou_at(&self, threshold: f64) -> Option<f64> {
        IOU_THRESHOLDS
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.iou_at[i])
    }

    pub fn flat(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("iou_0.3", self.iou_at[0]),
            ("iou_0.5", self.iou_at[1]),
            ("iou_0.7", self.iou_at[2]),
            ("miou", self.miou),
        ]
    }

    /// Flat key/value document with the keys `iou_0.3`, `iou_0.5`, `iou_0.7`, `miou`.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let map = self
            .flat()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::from(v)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    pub const CSV_HEADER: [&'static str; 4] = ["iou_0.3", "iou_0.5", "iou_0.7", "miou"];

    pub fn csv_row(&self) -> [String; 4] {
        [
            self.iou_at[0].to_string(),
            self.iou_at[1].to_string(),
            self.iou_at[2].to_string(),
            self.miou.to_string(),
        ]
    }
}

pub fn compute_metrics(predictions: &[FrameSpan], truths: &[FrameSpan]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    let per_sample_iou: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(&p, &t)| temporal_iou(p, t))
        .collect();
    let n = per_sample_iou.len() as f64;
    let iou_at = IOU_THRESHOLDS.map(|mu| {
        100.0 * per_sample_iou.iter().filter(|&&x| x >= mu).count() as f64 / n
    });
    let miou = 100.0 * per_sample_iou.iter().sum::<f64>() / n;
    Ok(MetricsReport {
        iou_at,
        miou,
        per_sample_iou,
    })
}
