//! Training, evaluation, the mutual-transfer ablation, and alpha/beta traces.

use std::io::Write;
use std::time::Instant;

use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{token_layout, FrameSpan, Sample, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::network::{predict_logits, ModelConfig, ModelParams, ParamGrads};
use crate::objective::{decode_span, loss_and_grads, LossBundle, LossTerms, Transfer};
use crate::timeline::{build_table, compute_metrics, subtitle_span_of_tokens, subtitle_to_frame, MetricsReport};

/// Mixed into the seed for the data-order RNG so shuffling never shares a
/// stream with initialization.
const SHUFFLE_SALT: u64 = 0x005e_ed0f_da7a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub mkt_enabled: bool,
    pub d: usize,
    pub d_in: usize,
    pub vocab_size: usize,
    /// Odd width of the video convolution.
    pub kernel_size: usize,
    /// Longest decodable span, counted in positions past the start.
    pub max_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 30,
            weight_decay: 0.01,
            seed: 0,
            mkt_enabled: true,
            d: 64,
            d_in: 32,
            vocab_size: DEFAULT_VOCAB_SIZE,
            kernel_size: 1,
            max_len: None,
        }
    }
}

impl TrainConfig {
    /// Large-model recipe: lr 1e-5, batch 4, 15 epochs, width 1024. Far too
    /// slow for this CPU implementation; kept as a reference point.
    pub fn full_scale() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 4,
            epochs: 15,
            d: 1024,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            d_in: self.d_in,
            vocab_size: self.vocab_size,
            kernel_size: self.kernel_size,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        self.model_config().validate()
    }

    fn transfer(&self) -> Transfer {
        if self.mkt_enabled {
            Transfer::Dynamic
        } else {
            Transfer::Disabled
        }
    }
}

/// Adam with decoupled weight decay, applied to every parameter array.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: ParamGrads,
    v: ParamGrads,
}

impl AdamW {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ParamGrads::zeros(params),
            v: ParamGrads::zeros(params),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, wd, eps) = (self.lr, self.weight_decay, self.eps);
        let tensors = params.tensors_mut();
        for (i, p) in tensors.iter_mut().enumerate() {
            Zip::from(p)
                .and(&grads.0[i])
                .and(&mut self.m.0[i])
                .and(&mut self.v.0[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * wd * *p;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossBundle,
    /// Mean over samples that produced pseudo labels; absent without transfer.
    pub mean_alpha: Option<f64>,
    pub mean_beta: Option<f64>,
    pub validation: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub mkt_enabled: bool,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_miou: f64,
    /// Where the best parameters were written, if anywhere.
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Copy with the wall clock zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub const LOSSES_CSV_HEADER: [&'static str; 7] = [
        "epoch",
        "loss_visual",
        "loss_textual",
        "loss_visual_mutual",
        "loss_textual_mutual",
        "total",
        "val_miou",
    ];

    pub fn write_losses_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::LOSSES_CSV_HEADER)?;
        for e in &self.epochs {
            let l = &e.losses;
            w.write_record([
                e.epoch.to_string(),
                l.loss_visual.to_string(),
                l.loss_textual.to_string(),
                l.loss_visual_mutual.to_string(),
                l.loss_textual_mutual.to_string(),
                l.total.to_string(),
                e.validation.miou.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// A finished run: its report plus the best and final parameters.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub report: TrainReport,
    pub best: ModelParams,
    pub last: ModelParams,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains from a seeded initialization. Validation runs after every epoch and
/// the parameters with the best validation mIoU are kept.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training corpus is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput("validation corpus is empty"));
    }
    let clock = Instant::now();
    let mut params = ModelParams::init(cfg.model_config())?;
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let transfer = cfg.transfer();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut order_rng);
        let mut bundles = Vec::with_capacity(order.len());
        let (mut alphas, mut betas) = (Vec::new(), Vec::new());

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = ParamGrads::zeros(&params);
            for &i in batch {
                let out = loss_and_grads(&params, &train_set[i], &transfer, LossTerms::ALL, cfg.max_len)?;
                if !out.bundle.is_finite() {
                    return Err(Error::Divergence { epoch, step });
                }
                grads.add_assign(&out.grads);
                bundles.push(out.bundle);
                if let Some(t) = out.transfer {
                    alphas.push(t.alpha);
                    betas.push(t.beta);
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &grads);
        }

        let validation = evaluate(&params, val_set, cfg.max_len)?;
        let (mean_alpha, mean_beta) = if cfg.mkt_enabled {
            (mean(&alphas).or(Some(0.0)), mean(&betas).or(Some(0.0)))
        } else {
            (None, None)
        };
        if best.as_ref().is_none_or(|(_, m, _)| validation.miou > *m) {
            best = Some((epoch, validation.miou, params.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            losses: LossBundle::mean(&bundles),
            mean_alpha,
            mean_beta,
            validation,
        });
    }

    let (best_epoch, best_miou, best) = best.expect("at least one epoch");
    Ok(TrainRun {
        report: TrainReport {
            config: cfg.clone(),
            mkt_enabled: cfg.mkt_enabled,
            epochs,
            best_epoch,
            best_miou,
            checkpoint: None,
            wall_clock_secs: clock.elapsed().as_secs_f64(),
        },
        best,
        last: params,
    })
}

/// Which head's decoded span is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predictor {
    /// Subtitle tokens, converted back to time; subtitle-free samples use the visual head.
    Textual,
    Visual,
}

impl Predictor {
    pub fn label(self) -> &'static str {
        match self {
            Predictor::Textual => "TP",
            Predictor::Visual => "VP",
        }
    }
}

/// Decoded answer span of one sample, in seconds.
pub fn predict_span(
    params: &ModelParams,
    sample: &Sample,
    predictor: Predictor,
    max_len: Option<usize>,
) -> Result<FrameSpan> {
    let logits = predict_logits(sample, params)?;
    if predictor == Predictor::Textual && logits.has_text() {
        let table = build_table(sample, &token_layout(sample));
        let (s, e) = decode_span(&logits.t_start, &logits.t_end, Some(&logits.t_mask), max_len)?;
        let subs = subtitle_span_of_tokens(crate::data::TokenSpan::new(s, e), &table)?;
        return subtitle_to_frame(subs, &table);
    }
    let (s, e) = decode_span(&logits.v_start, &logits.v_end, None, max_len)?;
    Ok(FrameSpan::from_buckets(s, e))
}

pub fn evaluate_predictor(
    params: &ModelParams,
    corpus: &[Sample],
    predictor: Predictor,
    max_len: Option<usize>,
) -> Result<MetricsReport> {
    let predictions = corpus
        .iter()
        .map(|s| predict_span(params, s, predictor, max_len))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<FrameSpan> = corpus.iter().map(|s| s.answer_frames).collect();
    compute_metrics(&predictions, &truths)
}

/// The reported metric: textual decoding with the visual fallback.
pub fn evaluate(params: &ModelParams, corpus: &[Sample], max_len: Option<usize>) -> Result<MetricsReport> {
    evaluate_predictor(params, corpus, Predictor::Textual, max_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `None` marks a cross-seed mean row.
    pub seed: Option<u64>,
    pub predictor: Predictor,
    pub mkt: bool,
    pub metrics: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// `(seed, with transfer, without transfer)`.
    pub reports: Vec<(u64, TrainReport, TrainReport)>,
}

impl Ablation {
    pub const CSV_HEADER: [&'static str; 7] =
        ["seed", "predictor", "mkt", "iou_0.3", "iou_0.5", "iou_0.7", "miou"];

    pub fn mean_row(&self, predictor: Predictor, mkt: bool) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.seed.is_none() && r.predictor == predictor && r.mkt == mkt)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![
                r.seed.map_or("mean".to_string(), |s| s.to_string()),
                r.predictor.label().to_string(),
                if r.mkt { "MKT" } else { "W/O MKT" }.to_string(),
            ];
            rec.extend(r.metrics.iter().map(|m| m.to_string()));
            w.write_record(rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn metric_row(m: &MetricsReport) -> [f64; 4] {
    [m.iou_at[0], m.iou_at[1], m.iou_at[2], m.miou]
}

/// Trains with and without transfer for each seed, from the same
/// initialization and data order, and scores both heads of the final
/// parameters on `val_set`.
pub fn ablate(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig, seeds: &[u64]) -> Result<Ablation> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    const ARMS: [(Predictor, bool); 4] = [
        (Predictor::Textual, true),
        (Predictor::Textual, false),
        (Predictor::Visual, true),
        (Predictor::Visual, false),
    ];
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let run = |mkt_enabled: bool| {
            train(
                train_set,
                val_set,
                &TrainConfig {
                    seed,
                    mkt_enabled,
                    ..cfg.clone()
                },
            )
        };
        let with = run(true)?;
        let without = run(false)?;
        for (predictor, mkt) in ARMS {
            let params = if mkt { &with.last } else { &without.last };
            let m = evaluate_predictor(params, val_set, predictor, cfg.max_len)?;
            rows.push(AblationRow {
                seed: Some(seed),
                predictor,
                mkt,
                metrics: metric_row(&m),
            });
        }
        reports.push((seed, with.report, without.report));
    }
    for (predictor, mkt) in ARMS {
        let arm: Vec<&AblationRow> = rows
            .iter()
            .filter(|r| r.predictor == predictor && r.mkt == mkt)
            .collect();
        let mut metrics = [0.0; 4];
        for r in &arm {
            for (acc, v) in metrics.iter_mut().zip(r.metrics) {
                *acc += v / arm.len() as f64;
            }
        }
        rows.push(AblationRow {
            seed: None,
            predictor,
            mkt,
            metrics,
        });
    }
    Ok(Ablation { rows, reports })
}

/// One row per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub mean_alpha: f64,
    pub mean_beta: f64,
}

pub fn alpha_beta_trace(report: &TrainReport) -> Result<Vec<TracePoint>> {
    if !report.mkt_enabled {
        return Err(Error::MktDisabled);
    }
    report
        .epochs
        .iter()
        .map(|e| match (e.mean_alpha, e.mean_beta) {
            (Some(a), Some(b)) => Ok(TracePoint {
                epoch: e.epoch,
                mean_alpha: a,
                mean_beta: b,
            }),
            _ => Err(Error::MktDisabled),
        })
        .collect()
}

/// Pointwise mean of several equally long traces.
pub fn mean_trace(traces: &[Vec<TracePoint>]) -> Vec<TracePoint> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let n = traces.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, p)| TracePoint {
            epoch: p.epoch,
            mean_alpha: traces.iter().map(|t| t[i].mean_alpha).sum::<f64>() / n,
            mean_beta: traces.iter().map(|t| t[i].mean_beta).sum::<f64>() / n,
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(trace: &[TracePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in trace {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
