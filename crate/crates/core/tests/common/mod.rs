//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use mutual_span::data::{token_layout, FrameSpan, Sample, Subtitle, TokenSpan};
use mutual_span::network::{ModelConfig, ModelParams, ParamKey};
use mutual_span::objective::{loss_and_grads, loss_value, LossTerms, Transfer};
use mutual_span::synth::{generate_corpus, GenConfig};
use mutual_span::timeline::{build_table, frame_to_subtitle, subtitle_to_frame, IndexInterval, TimelineTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `k = 6` seconds, two question tokens, three subtitles with six tokens in
/// total (`n = 8`), answer aligned to the last two subtitles.
pub fn toy_sample(d_in: usize, seed: u64) -> Sample {
    let mut r = rng(seed);
    Sample {
        id: "toy".into(),
        duration_k: 6,
        video_features: (0..6)
            .map(|_| (0..d_in).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect(),
        subtitles: vec![
            Subtitle { start_sec: 0.0, end_sec: 2.0, token_ids: vec![3, 4] },
            Subtitle { start_sec: 2.0, end_sec: 4.0, token_ids: vec![5, 6, 7] },
            Subtitle { start_sec: 4.5, end_sec: 6.0, token_ids: vec![8] },
        ],
        question_tokens: vec![1, 2],
        answer_frames: FrameSpan::new(2.0, 6.0),
    }
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d: 4,
        d_in: 3,
        vocab_size: 12,
        kernel_size: 3,
        seed: 17,
    }
}

pub fn toy_params() -> ModelParams {
    ModelParams::init(toy_config()).unwrap()
}

/// Denominator floor for the relative error. Central differences at step
/// `1e-5` carry round-off near `1e-11` on an O(1) loss, so arrays whose
/// gradient is below this size (including the exactly-zero head biases) are
/// judged on absolute error instead.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

/// Largest relative deviation between analytic and central-difference
/// gradients, per parameter array:
/// `|a - n|_inf / max(|a|_inf, |n|_inf, FD_SCALE_FLOOR)`.
pub fn finite_difference_errors(
    params: &ModelParams,
    sample: &Sample,
    transfer: &Transfer,
    step: f64,
) -> Vec<(ParamKey, f64)> {
    let analytic = loss_and_grads(params, sample, transfer, LossTerms::ALL, None).unwrap().grads;
    let total = |p: &ModelParams| loss_value(p, sample, transfer, None).unwrap().total;
    ParamKey::ALL
        .iter()
        .map(|&key| {
            let a = analytic.get(key);
            let mut worst_diff = 0.0f64;
            let mut scale = 0.0f64;
            for idx in 0..a.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let cols = a.ncols();
                let at = (idx / cols, idx % cols);
                plus.get_mut(key)[at] += step;
                minus.get_mut(key)[at] -= step;
                let numeric = (total(&plus) - total(&minus)) / (2.0 * step);
                worst_diff = worst_diff.max((a[at] - numeric).abs());
                scale = scale.max(a[at].abs()).max(numeric.abs());
            }
            let rel = worst_diff / scale.max(FD_SCALE_FLOOR);
            (key, rel)
        })
        .collect()
}

/// Exhaustive `O(n^2)` span search with the same tie rule as the decoder.
#[allow(clippy::needless_range_loop)]
pub fn brute_decode(
    start: &[f64],
    end: &[f64],
    mask: Option<&[bool]>,
    max_len: Option<usize>,
) -> Option<(usize, usize)> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let mut best: Option<(f64, usize, usize)> = None;
    for s in 0..start.len() {
        for e in s..end.len() {
            if !live(s) || !live(e) || max_len.is_some_and(|m| e - s > m) {
                continue;
            }
            let score = start[s] + end[e];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}

/// IoU of integer-endpoint time intervals by counting unit cells.
pub fn cell_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let cells = |(s, e): (usize, usize)| (s..e).collect::<std::collections::BTreeSet<_>>();
    let (x, y) = (cells(a), cells(b));
    let union = x.union(&y).count();
    if union == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// IoU of inclusive index sets by enumeration.
pub fn set_iou<S: IndexInterval>(a: &S, b: &S) -> f64 {
    let set = |s: &S| {
        let (lo, hi) = s.bounds();
        (lo..=hi).collect::<std::collections::BTreeSet<_>>()
    };
    let (x, y) = (set(a), set(b));
    x.intersection(&y).count() as f64 / x.union(&y).count() as f64
}

/// A random valid sample: `r` subtitles on integer or half-second
/// boundaries with gaps, random token counts.
pub fn random_sample(r: &mut impl Rng, k: usize, d_in: usize) -> Sample {
    let mut subtitles = Vec::new();
    let mut t = 0.0;
    let mut next_tok = 2u32;
    while subtitles.len() < 6 {
        let gap = if r.random_bool(0.3) { r.random_range(1..4) as f64 * 0.5 } else { 0.0 };
        let start = t + gap;
        let end = start + r.random_range(1..8) as f64 * 0.5;
        if end > k as f64 {
            break;
        }
        let ntok = r.random_range(1..4);
        subtitles.push(Subtitle {
            start_sec: start,
            end_sec: end,
            token_ids: (0..ntok).map(|i| next_tok + i).collect(),
        });
        next_tok += ntok;
        t = end;
    }
    let a = r.random_range(0..k);
    let b = r.random_range(a + 1..=k);
    Sample {
        id: "rand".into(),
        duration_k: k,
        video_features: vec![vec![0.0; d_in]; k],
        subtitles,
        question_tokens: vec![1; r.random_range(0..3)],
        answer_frames: FrameSpan::new(a as f64, b as f64),
    }
}

pub fn token_span(t: &TimelineTable, first: usize, last: usize) -> TokenSpan {
    TokenSpan::new(t.entries[first].tokens.start_tok, t.entries[last].tokens.end_tok)
}

/// First default-corpus sample whose answer starts and ends on subtitle boundaries.
pub fn aligned_sample() -> Sample {
    let corpus = generate_corpus(&GenConfig::default()).unwrap();
    corpus
        .into_iter()
        .find(|s| {
            let t = build_table(s, &token_layout(s));
            !t.is_empty()
                && frame_to_subtitle(s.answer_frames, &t)
                    .and_then(|sub| subtitle_to_frame(sub, &t))
                    .is_ok_and(|f| f == s.answer_frames)
        })
        .expect("default corpus has a boundary-aligned answer")
}
