//! Span losses, decoding, and cross-modal mutual transfer.
//!
//! Each predictor's decoded span is converted through the timeline table into
//! a pseudo label for the *other* predictor. The mutual terms are weighted by
//! the IoU of that pseudo label against the ground truth and only ever push
//! gradient into the predictor whose logits they score: pseudo labels are plain
//! indices and the weights are plain numbers, so nothing links them back to
//! the producer on the tape.

use serde::{Deserialize, Serialize};

use crate::data::{token_layout, FrameSpan, Sample, TokenSpan};
use crate::error::{Error, Result};
use crate::network::{Builder, ModelParams, ParamGrads, SpanLogits};
use crate::tape::Var;
use crate::timeline::{
    build_table, frame_buckets, frame_to_subtitle, ground_truth_targets, index_iou,
    subtitle_span_of_tokens, subtitle_to_frame, temporal_iou, token_span_of_subtitles,
    GroundTruth, TimelineTable,
};

fn log_softmax_at(logits: &[f64], target: usize, mask: Option<&[bool]>) -> f64 {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..logits.len())
        .filter(|&i| live(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..logits.len())
        .filter(|&i| live(i))
        .map(|i| (logits[i] - max).exp())
        .sum();
    logits[target] - max - z.ln()
}

fn check_target(len: usize, target: usize, mask: Option<&[bool]>) -> Result<()> {
    if target >= len {
        return Err(Error::IndexOutOfRange { index: target, len });
    }
    if mask.is_some_and(|m| !m[target]) {
        return Err(Error::MaskedTarget(target));
    }
    Ok(())
}

/// Cross-entropy of the start and end distributions at their targets.
/// Masked positions are left out of the normalization.
pub fn span_ce(
    start_logits: &[f64],
    end_logits: &[f64],
    target_start: usize,
    target_end: usize,
    mask: Option<&[bool]>,
) -> Result<f64> {
    if start_logits.len() != end_logits.len() {
        return Err(Error::LengthMismatch {
            left: start_logits.len(),
            right: end_logits.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != start_logits.len() {
            return Err(Error::LengthMismatch {
                left: m.len(),
                right: start_logits.len(),
            });
        }
    }
    check_target(start_logits.len(), target_start, mask)?;
    check_target(end_logits.len(), target_end, mask)?;
    Ok(-log_softmax_at(start_logits, target_start, mask) - log_softmax_at(end_logits, target_end, mask))
}

/// Best `(s, e)` with `s <= e` (and `e - s <= max_len`) by `start[s] + end[e]`.
/// Ties go to the smallest `s`, then the smallest `e`.
pub fn decode_span(
    start_logits: &[f64],
    end_logits: &[f64],
    mask: Option<&[bool]>,
    max_len: Option<usize>,
) -> Result<(usize, usize)> {
    let n = start_logits.len();
    if end_logits.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: end_logits.len(),
        });
    }
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let window = max_len.unwrap_or(usize::MAX);

    // Monotone deque of candidate starts: values non-increasing front to back,
    // equal values keep the older (smaller) index in front.
    let mut starts = std::collections::VecDeque::new();
    let mut best: Option<(f64, usize, usize)> = None;
    for e in 0..n {
        if live(e) {
            while starts.back().is_some_and(|&b: &usize| start_logits[b] < start_logits[e]) {
                starts.pop_back();
            }
            starts.push_back(e);
        }
        while starts.front().is_some_and(|&f: &usize| e - f > window) {
            starts.pop_front();
        }
        if !live(e) {
            continue;
        }
        let s = *starts.front().expect("e itself is a live start");
        let score = start_logits[s] + end_logits[e];
        let better = match best {
            None => true,
            Some((b, bs, _)) => score > b || (score == b && s < bs),
        };
        if better {
            best = Some((score, s, e));
        }
    }
    best.map(|(_, s, e)| (s, e)).ok_or(Error::FullyMasked)
}

/// Decoded spans, converted pseudo labels, and the transfer weights for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferState {
    pub visual_pred_span: FrameSpan,
    pub textual_pred_span: TokenSpan,
    /// Frame indices converted from the textual prediction.
    pub pseudo_visual: (usize, usize),
    /// Token span converted from the visual prediction.
    pub pseudo_textual: TokenSpan,
    pub alpha: f64,
    pub beta: f64,
}

impl TransferState {
    pub fn pseudo_visual_span(&self) -> FrameSpan {
        FrameSpan::from_buckets(self.pseudo_visual.0, self.pseudo_visual.1)
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }
}

/// Converts each predictor's decoded span into a target for the other one.
/// Weights start at zero; see [`odl_weights`].
pub fn build_pseudo_labels(
    logits: &SpanLogits,
    tbl: &TimelineTable,
    max_len: Option<usize>,
) -> Result<TransferState> {
    if tbl.is_empty() || !logits.has_text() {
        return Err(Error::NoTextTarget);
    }
    let (vs, ve) = decode_span(&logits.v_start, &logits.v_end, None, max_len)?;
    let visual_pred_span = FrameSpan::from_buckets(vs, ve);
    let pseudo_textual = token_span_of_subtitles(frame_to_subtitle(visual_pred_span, tbl)?, tbl)?;

    let (ts, te) = decode_span(&logits.t_start, &logits.t_end, Some(&logits.t_mask), max_len)?;
    let textual_pred_span = TokenSpan::new(ts, te);
    let as_time = subtitle_to_frame(subtitle_span_of_tokens(textual_pred_span, tbl)?, tbl)?;
    let pseudo_visual = frame_buckets(as_time, tbl.duration_k);

    Ok(TransferState {
        visual_pred_span,
        textual_pred_span,
        pseudo_visual,
        pseudo_textual,
        alpha: 0.0,
        beta: 0.0,
    })
}

/// `(alpha, beta)`: temporal IoU of the visual pseudo label with the answer,
/// and index IoU of the textual pseudo label with the ground-truth token span.
pub fn odl_weights(state: &TransferState, gt_answer: FrameSpan, gt_tokens: TokenSpan) -> (f64, f64) {
    let alpha = temporal_iou(state.pseudo_visual_span(), gt_answer);
    let beta = index_iou(&state.pseudo_textual, &gt_tokens);
    (alpha, beta)
}

/// `(alpha · CE(visual, pseudo_visual), beta · CE(textual, pseudo_textual))`.
pub fn mutual_losses(logits: &SpanLogits, state: &TransferState) -> Result<(f64, f64)> {
    let (pv_s, pv_e) = state.pseudo_visual;
    let vm = if state.alpha == 0.0 {
        0.0
    } else {
        state.alpha * span_ce(&logits.v_start, &logits.v_end, pv_s, pv_e, None)?
    };
    let pt = state.pseudo_textual;
    let tm = if state.beta == 0.0 {
        0.0
    } else {
        state.beta
            * span_ce(
                &logits.t_start,
                &logits.t_end,
                pt.start_tok,
                pt.end_tok,
                Some(&logits.t_mask),
            )?
    };
    Ok((vm, tm))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub loss_visual: f64,
    pub loss_textual: f64,
    pub loss_visual_mutual: f64,
    pub loss_textual_mutual: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a LossBundle>) -> LossBundle {
        let mut acc = LossBundle::default();
        let mut n = 0usize;
        for b in items {
            acc.loss_visual += b.loss_visual;
            acc.loss_textual += b.loss_textual;
            acc.loss_visual_mutual += b.loss_visual_mutual;
            acc.loss_textual_mutual += b.loss_textual_mutual;
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let c = 1.0 / n as f64;
        total_loss(
            acc.loss_visual * c,
            acc.loss_textual * c,
            Some(acc.loss_visual_mutual * c),
            Some(acc.loss_textual_mutual * c),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Sum of the supervised terms and whichever mutual terms are present.
pub fn total_loss(
    loss_visual: f64,
    loss_textual: f64,
    loss_visual_mutual: Option<f64>,
    loss_textual_mutual: Option<f64>,
) -> LossBundle {
    let vm = loss_visual_mutual.unwrap_or(0.0);
    let tm = loss_textual_mutual.unwrap_or(0.0);
    LossBundle {
        loss_visual,
        loss_textual,
        loss_visual_mutual: vm,
        loss_textual_mutual: tm,
        total: loss_visual + loss_textual + vm + tm,
    }
}

/// How the mutual terms are formed for a training step.
#[derive(Debug, Clone, PartialEq)]
pub enum Transfer {
    /// Supervised terms only.
    Disabled,
    /// Pseudo labels from this step's logits, weights from IoU against truth.
    Dynamic,
    /// Dynamic pseudo labels with the weights overridden.
    FixedWeights { alpha: f64, beta: f64 },
    /// Pseudo labels and weights supplied by the caller.
    Frozen(TransferState),
}

/// Which components feed the backward pass. Reported values always cover all four.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub visual: bool,
    pub textual: bool,
    pub visual_mutual: bool,
    pub textual_mutual: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        visual: true,
        textual: true,
        visual_mutual: true,
        textual_mutual: true,
    };
    pub const NONE: LossTerms = LossTerms {
        visual: false,
        textual: false,
        visual_mutual: false,
        textual_mutual: false,
    };
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub bundle: LossBundle,
    pub transfer: Option<TransferState>,
    pub logits: SpanLogits,
    pub grads: ParamGrads,
}

struct Prepared {
    table: TimelineTable,
    truth: GroundTruth,
}

fn prepare(sample: &Sample) -> Prepared {
    let layout = token_layout(sample);
    let table = build_table(sample, &layout);
    let truth = ground_truth_targets(sample, &table);
    Prepared { table, truth }
}

fn resolve_transfer(
    transfer: &Transfer,
    logits: &SpanLogits,
    prep: &Prepared,
    answer: FrameSpan,
    max_len: Option<usize>,
) -> Result<Option<TransferState>> {
    let Some(gt_tokens) = prep.truth.tokens else {
        return Ok(None);
    };
    if !logits.has_text() {
        return Ok(None);
    }
    let dynamic = || -> Result<TransferState> {
        let state = build_pseudo_labels(logits, &prep.table, max_len)?;
        let (a, b) = odl_weights(&state, answer, gt_tokens);
        Ok(state.with_weights(a, b))
    };
    Ok(match transfer {
        Transfer::Disabled => None,
        Transfer::Dynamic => Some(dynamic()?),
        Transfer::FixedWeights { alpha, beta } => Some(dynamic()?.with_weights(*alpha, *beta)),
        Transfer::Frozen(state) => Some(state.clone()),
    })
}

/// Builds all loss terms on the tape of `b`. Returns the bundle, the transfer
/// state used, and the root to differentiate (if any term is selected).
pub fn attach_losses(
    b: &mut Builder<'_>,
    fv: &crate::network::ForwardVars,
    sample: &Sample,
    transfer: &Transfer,
    terms: LossTerms,
    max_len: Option<usize>,
) -> Result<(LossBundle, Option<TransferState>, Option<Var>)> {
    let prep = prepare(sample);
    let logits = b.span_logits(fv);
    let state = resolve_transfer(transfer, &logits, &prep, sample.answer_frames, max_len)?;
    let g = &mut b.graph;

    let pair = |g: &mut crate::tape::Graph, s_var: Var, e_var: Var, ts: usize, te: usize| {
        let a = g.cross_entropy(s_var, ts);
        let c = g.cross_entropy(e_var, te);
        g.add(a, c)
    };

    let (fs, fe) = prep.truth.frames;
    let lv = pair(g, fv.v_start, fv.v_end, fs, fe);
    let lt = prep
        .truth
        .tokens
        .filter(|_| logits.has_text())
        .map(|tok| pair(g, fv.t_start, fv.t_end, tok.start_tok, tok.end_tok));
    let mutual = state.as_ref().map(|st| {
        let (ps, pe) = st.pseudo_visual;
        let vm = pair(g, fv.v_start, fv.v_end, ps, pe);
        let tm = pair(g, fv.t_start, fv.t_end, st.pseudo_textual.start_tok, st.pseudo_textual.end_tok);
        let vm = g.scale(vm, st.alpha);
        let tm = g.scale(tm, st.beta);
        (vm, tm)
    });

    let val = |v: Var| g.scalar(v);
    let bundle = total_loss(
        val(lv),
        lt.map_or(0.0, val),
        mutual.map(|(vm, _)| val(vm)),
        mutual.map(|(_, tm)| val(tm)),
    );

    let mut selected = Vec::new();
    if terms.visual {
        selected.push(lv);
    }
    if terms.textual {
        selected.extend(lt);
    }
    if let Some((vm, tm)) = mutual {
        if terms.visual_mutual {
            selected.push(vm);
        }
        if terms.textual_mutual {
            selected.push(tm);
        }
    }
    let root = selected.into_iter().reduce(|a, c| g.add(a, c));
    Ok((bundle, state, root))
}

/// Forward, losses, and parameter gradients for one sample.
pub fn loss_and_grads(
    params: &ModelParams,
    sample: &Sample,
    transfer: &Transfer,
    terms: LossTerms,
    max_len: Option<usize>,
) -> Result<StepOutput> {
    let mut b = Builder::new(params);
    let fv = b.forward(sample)?;
    let (bundle, state, root) = attach_losses(&mut b, &fv, sample, transfer, terms, max_len)?;
    let grads = match root {
        Some(r) => {
            let mut g = b.graph.backward(r);
            b.param_grads(&mut g)
        }
        None => ParamGrads::zeros(params),
    };
    Ok(StepOutput {
        bundle,
        transfer: state,
        logits: b.span_logits(&fv),
        grads,
    })
}

/// Loss bundle without building gradients.
pub fn loss_value(
    params: &ModelParams,
    sample: &Sample,
    transfer: &Transfer,
    max_len: Option<usize>,
) -> Result<LossBundle> {
    let mut b = Builder::new(params);
    let fv = b.forward(sample)?;
    let (bundle, _, _) = attach_losses(&mut b, &fv, sample, transfer, LossTerms::NONE, max_len)?;
    Ok(bundle)
}
