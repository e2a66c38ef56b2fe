//! Deterministic synthetic corpora with a plantable answer signal.
//!
//! Every sample belongs to a topic, picked at random. The topic fixes three things.
//! - Its question tokens come from a topic-specific vocabulary band.
//! - Its answer frames carry an additive topic vector on top of Gaussian noise.
//! - Its answer-region subtitle tokens are drawn from a topic cluster. The first
//!   and last answer tokens may be replaced by topic start and end markers.
//!
//! With `signal_strength = 0` none of this is planted. Features, tokens and
//! answer positions are then mutually independent.
//!
//! The vocabulary is split into a background band covering the first quarter of
//! ids, then one band per topic. Each topic band has four equal parts: question,
//! answer cluster, start marker and end marker.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{token_layout, FrameSpan, Sample, Subtitle, TokenId, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::timeline::{build_table, ground_truth_targets};

/// Stream reserved for the per-topic signal vectors; samples use streams `0..n`.
const TOPIC_STREAM: u64 = u64::MAX;

fn default_samples() -> usize {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_samples: usize,
    /// Video length in seconds; one feature row per second.
    pub k: usize,
    pub d_in: usize,
    pub vocab_size: usize,
    /// Inclusive bounds on the number of subtitle slots before gaps are dropped.
    pub num_subtitles_range: [usize; 2],
    /// Inclusive bounds on the integer answer length in seconds.
    pub answer_len_range: [usize; 2],
    pub subtitle_gap_prob: f64,
    pub signal_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub num_topics: usize,
    pub tokens_per_subtitle_range: [usize; 2],
    pub question_len_range: [usize; 2],
    /// Chance that a boundary marker is planted, before scaling by signal strength.
    pub marker_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_samples: default_samples(),
            k: 64,
            d_in: 32,
            vocab_size: DEFAULT_VOCAB_SIZE,
            num_subtitles_range: [4, 10],
            answer_len_range: [4, 16],
            subtitle_gap_prob: 0.2,
            signal_strength: 1.0,
            noise_std: 1.0,
            seed: 0,
            num_topics: 8,
            tokens_per_subtitle_range: [2, 6],
            question_len_range: [3, 6],
            marker_prob: 0.75,
        }
    }
}

fn check_range(name: &str, r: [usize; 2], min: usize) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::Config(format!("{name}: empty range [{}, {}]", r[0], r[1])));
    }
    if r[0] < min {
        return Err(Error::Config(format!("{name}: lower bound must be at least {min}")));
    }
    Ok(())
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name}: {p} is not a probability")));
    }
    Ok(())
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d_in == 0 || self.num_topics == 0 {
            return Err(Error::Config("k, d_in and num_topics must be positive".into()));
        }
        check_range("num_subtitles_range", self.num_subtitles_range, 0)?;
        check_range("answer_len_range", self.answer_len_range, 1)?;
        check_range("tokens_per_subtitle_range", self.tokens_per_subtitle_range, 1)?;
        check_range("question_len_range", self.question_len_range, 0)?;
        check_prob("subtitle_gap_prob", self.subtitle_gap_prob)?;
        check_prob("marker_prob", self.marker_prob)?;
        if self.answer_len_range[1] > self.k {
            return Err(Error::Config(format!(
                "k = {} is shorter than the longest answer ({})",
                self.k, self.answer_len_range[1]
            )));
        }
        if self.num_subtitles_range[1] > self.k {
            return Err(Error::Config(format!(
                "cannot cut a {}-second video into {} subtitles",
                self.k, self.num_subtitles_range[1]
            )));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return Err(Error::Config("signal_strength must be finite and non-negative".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        Vocab::new(self).map(|_| ())
    }
}

/// Token id bands; see the module docs.
#[derive(Debug, Clone, Copy)]
struct Vocab {
    background: usize,
    part: usize,
}

#[derive(Debug, Clone, Copy)]
enum Band {
    Question = 0,
    Cluster = 1,
    StartMarker = 2,
    EndMarker = 3,
}

impl Vocab {
    fn new(cfg: &GenConfig) -> Result<Self> {
        let background = cfg.vocab_size / 4;
        let part = (cfg.vocab_size - background) / (4 * cfg.num_topics);
        if background == 0 || part == 0 {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} topics",
                cfg.vocab_size, cfg.num_topics
            )));
        }
        Ok(Self { background, part })
    }

    fn background(&self, rng: &mut impl Rng) -> TokenId {
        rng.random_range(0..self.background) as TokenId
    }

    fn topic(&self, topic: usize, band: Band, rng: &mut impl Rng) -> TokenId {
        let base = self.background + (4 * topic + band as usize) * self.part;
        (base + rng.random_range(0..self.part)) as TokenId
    }
}

fn topic_vectors(cfg: &GenConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TOPIC_STREAM);
    (0..cfg.num_topics)
        .map(|_| {
            (0..cfg.d_in)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}

fn gen_subtitles(cfg: &GenConfig, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Vec<Subtitle> {
    let [lo, hi] = cfg.num_subtitles_range;
    let slots = rng.random_range(lo..=hi);
    if slots == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<usize> = sample_indices(rng, cfg.k - 1, slots - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut bounds = Vec::with_capacity(slots + 1);
    bounds.push(0);
    bounds.extend(cuts);
    bounds.push(cfg.k);

    let [tlo, thi] = cfg.tokens_per_subtitle_range;
    let mut subs = Vec::new();
    for w in bounds.windows(2) {
        // Draw both regardless so dropping a slot does not shift later draws.
        let dropped = rng.random_bool(cfg.subtitle_gap_prob);
        let ntok = rng.random_range(tlo..=thi);
        let token_ids = (0..ntok).map(|_| vocab.background(rng)).collect();
        if !dropped {
            subs.push(Subtitle {
                start_sec: w[0] as f64,
                end_sec: w[1] as f64,
                token_ids,
            });
        }
    }
    subs
}

/// Replaces answer-region tokens with topic cluster tokens and boundary markers.
fn plant_tokens(sample: &mut Sample, topic: usize, cfg: &GenConfig, vocab: &Vocab, rng: &mut ChaCha8Rng) {
    let layout = token_layout(sample);
    let table = build_table(sample, &layout);
    let Some(span) = ground_truth_targets(sample, &table).tokens else {
        return;
    };
    let p_cluster = cfg.signal_strength.min(1.0);
    let p_marker = (cfg.marker_prob * cfg.signal_strength).min(1.0);
    let q = layout.question_len();
    let locate = |tok: usize| {
        let sub = layout.token_to_subtitle[tok].expect("answer tokens are subtitle tokens");
        (sub, tok - layout.subtitle_token_range[sub].start_tok)
    };
    debug_assert!(span.start_tok >= q);
    for tok in span.start_tok..=span.end_tok {
        let plant_cluster = rng.random_bool(p_cluster);
        let id = vocab.topic(topic, Band::Cluster, rng);
        if plant_cluster {
            let (s, i) = locate(tok);
            sample.subtitles[s].token_ids[i] = id;
        }
    }
    for (tok, band) in [(span.end_tok, Band::EndMarker), (span.start_tok, Band::StartMarker)] {
        let plant = rng.random_bool(p_marker);
        let id = vocab.topic(topic, band, rng);
        if plant {
            let (s, i) = locate(tok);
            sample.subtitles[s].token_ids[i] = id;
        }
    }
}

fn gen_sample(
    cfg: &GenConfig,
    vocab: &Vocab,
    topics: &[Vec<f64>],
    index: usize,
) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let topic = rng.random_range(0..cfg.num_topics);
    let [qlo, qhi] = cfg.question_len_range;
    let qlen = rng.random_range(qlo..=qhi);
    let question_tokens = (0..qlen)
        .map(|_| vocab.topic(topic, Band::Question, &mut rng))
        .collect();

    let subtitles = gen_subtitles(cfg, vocab, &mut rng);

    let [alo, ahi] = cfg.answer_len_range;
    let len = rng.random_range(alo..=ahi);
    let start = rng.random_range(0..=cfg.k - len);

    let signal = &topics[topic];
    let video_features = (0..cfg.k)
        .map(|t| {
            let inside = t >= start && t < start + len;
            (0..cfg.d_in)
                .map(|j| {
                    let noise: f64 = rng.sample(StandardNormal);
                    let planted = if inside { cfg.signal_strength * signal[j] } else { 0.0 };
                    cfg.noise_std * noise + planted
                })
                .collect()
        })
        .collect();

    let mut sample = Sample {
        id: format!("syn-{}-{index:05}", cfg.seed),
        duration_k: cfg.k,
        video_features,
        subtitles,
        question_tokens,
        answer_frames: FrameSpan::new(start as f64, (start + len) as f64),
    };
    if cfg.signal_strength > 0.0 {
        plant_tokens(&mut sample, topic, cfg, vocab, &mut rng);
    }
    sample
}

/// Generates `cfg.num_samples` valid samples. Sample `i` depends only on
/// `cfg` and `i`.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let vocab = Vocab::new(cfg)?;
    let topics = topic_vectors(cfg);
    Ok((0..cfg.num_samples)
        .map(|i| gen_sample(cfg, &vocab, &topics, i))
        .collect())
}

/// Seeded shuffle, then the first `round(n * train_frac)` samples go to train.
/// Both parts keep the corpus order.
pub fn split_corpus(corpus: &[Sample], train_frac: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac {train_frac} must lie in (0, 1)")));
    }
    let n = corpus.len();
    let n_train = ((n as f64) * train_frac).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for i in sample_indices(&mut rng, n, n_train) {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = corpus.iter().zip(&in_train).partition(|(_, &t)| t);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        test.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}
