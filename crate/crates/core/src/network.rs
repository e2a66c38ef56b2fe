//! Differentiable forward pass.
//!
//! Video and text encoders feed a context-query attention block; the video
//! path then goes through a context-query concatenation, cross attention and
//! a 1-D convolution before two unidirectional LSTM span heads. The text path
//! is a projection plus a broadcast of the pooled video feature, scored by two
//! linear heads.
//!
//! All graph construction goes through [`Builder`], so the value-level helpers
//! in this module and the training loop share one implementation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{token_layout, Sample};
use crate::error::{Error, Result};
use crate::tape::{Grads, Graph, Var};

/// Logit written into masked (question) positions of the textual heads.
pub const MASKED_LOGIT: f64 = -1e30;

/// Architecture description; doubles as the checkpoint manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub d_in: usize,
    pub vocab_size: usize,
    pub kernel_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_in: 32,
            vocab_size: crate::data::DEFAULT_VOCAB_SIZE,
            kernel_size: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_in == 0 || self.vocab_size == 0 {
            return Err(Error::Config("d, d_in and vocab_size must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoders,
    Fusion,
    VisualPredictor,
    TextualPredictor,
}

macro_rules! param_keys {
    ($($key:ident => $name:literal, $group:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum ParamKey { $($key),* }

        impl ParamKey {
            pub const ALL: &'static [ParamKey] = &[$(ParamKey::$key),*];

            pub fn name(self) -> &'static str {
                match self { $(ParamKey::$key => $name),* }
            }

            pub fn group(self) -> ParamGroup {
                match self { $(ParamKey::$key => ParamGroup::$group),* }
            }

            pub fn from_name(name: &str) -> Option<ParamKey> {
                match name { $($name => Some(ParamKey::$key),)* _ => None }
            }
        }
    };
}

param_keys! {
    VideoWeight => "video.weight", Encoders;
    VideoBias => "video.bias", Encoders;
    TokenEmbedding => "text.embedding", Encoders;
    CqaVideo => "cqa.w_video", Fusion;
    CqaText => "cqa.w_text", Fusion;
    CqaJoint => "cqa.w_joint", Fusion;
    FfnCWeight => "ffn_c.weight", Fusion;
    FfnCBias => "ffn_c.bias", Fusion;
    AttnQuery => "attn.query", Fusion;
    AttnKey => "attn.key", Fusion;
    ConvWeight => "conv.weight", Fusion;
    ConvBias => "conv.bias", Fusion;
    LstmStartInput => "lstm_start.w_input", VisualPredictor;
    LstmStartHidden => "lstm_start.w_hidden", VisualPredictor;
    LstmStartBias => "lstm_start.bias", VisualPredictor;
    LstmEndInput => "lstm_end.w_input", VisualPredictor;
    LstmEndHidden => "lstm_end.w_hidden", VisualPredictor;
    LstmEndBias => "lstm_end.bias", VisualPredictor;
    VisualStartHead => "visual_start.weight", VisualPredictor;
    VisualStartBias => "visual_start.bias", VisualPredictor;
    VisualEndHead => "visual_end.weight", VisualPredictor;
    VisualEndBias => "visual_end.bias", VisualPredictor;
    FfnPWeight => "ffn_p.weight", TextualPredictor;
    FfnPBias => "ffn_p.bias", TextualPredictor;
    TextualStartHead => "textual_start.weight", TextualPredictor;
    TextualStartBias => "textual_start.bias", TextualPredictor;
    TextualEndHead => "textual_end.weight", TextualPredictor;
    TextualEndBias => "textual_end.bias", TextualPredictor;
}

impl ParamKey {
    /// `(rows, cols, fan_in)`.
    pub fn shape(self, c: &ModelConfig) -> (usize, usize, usize) {
        use ParamKey::*;
        let d = c.d;
        match self {
            VideoWeight => (c.d_in, d, c.d_in),
            VideoBias => (1, d, c.d_in),
            TokenEmbedding => (c.vocab_size, d, 1),
            CqaVideo | CqaText => (d, 1, 3 * d),
            CqaJoint => (1, d, 3 * d),
            FfnCWeight => (4 * d, d, 4 * d),
            FfnCBias => (1, d, 4 * d),
            AttnQuery | AttnKey => (d, d, d),
            ConvWeight => (c.kernel_size * 2 * d, d, c.kernel_size * 2 * d),
            ConvBias => (1, d, c.kernel_size * 2 * d),
            FfnPWeight => (d, d, d),
            FfnPBias => (1, d, d),
            LstmStartInput | LstmStartHidden | LstmEndInput | LstmEndHidden => (d, 4 * d, d),
            LstmStartBias | LstmEndBias => (1, 4 * d, d),
            VisualStartHead | VisualEndHead | TextualStartHead | TextualEndHead => (d, 1, d),
            VisualStartBias | VisualEndBias | TextualStartBias | TextualEndBias => (1, 1, d),
        }
    }
}

/// Every learned array, indexed by [`ParamKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: Vec<Array2<f64>>,
}

impl ModelParams {
    /// Uniform initialization in `±1/sqrt(fan_in)` from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = ParamKey::ALL
            .iter()
            .map(|k| {
                let (r, c, fan_in) = k.shape(&config);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Builds params from named arrays, checking every shape against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Array2<f64>>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != ParamKey::ALL.len() {
            return Err(Error::ManifestMismatch(format!(
                "expected {} parameter arrays, got {}",
                ParamKey::ALL.len(),
                tensors.len()
            )));
        }
        for (k, t) in ParamKey::ALL.iter().zip(&tensors) {
            let (r, c, _) = k.shape(&config);
            if t.dim() != (r, c) {
                return Err(Error::ManifestMismatch(format!(
                    "{} has shape {:?}, manifest implies {:?}",
                    k.name(),
                    t.dim(),
                    (r, c)
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, key: ParamKey) -> &Array2<f64> {
        &self.tensors[key as usize]
    }

    pub fn get_mut(&mut self, key: ParamKey) -> &mut Array2<f64> {
        &mut self.tensors[key as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &Array2<f64>)> {
        ParamKey::ALL.iter().copied().zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }
}

/// Gradients aligned with [`ParamKey::ALL`]; unreached parameters are exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Array2<f64>>);

impl ParamGrads {
    pub fn zeros(params: &ModelParams) -> Self {
        Self(params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect())
    }

    pub fn get(&self, key: ParamKey) -> &Array2<f64> {
        &self.0[key as usize]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            *a *= c;
        }
    }

    pub fn is_zero_in(&self, group: ParamGroup) -> bool {
        ParamKey::ALL
            .iter()
            .filter(|k| k.group() == group)
            .all(|&k| self.get(k).iter().all(|&x| x == 0.0))
    }
}

/// Intermediate tensors of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub v: Array2<f64>,
    pub t: Array2<f64>,
    pub g: Array2<f64>,
    pub g_r: Array2<f64>,
    pub g_c: Array2<f64>,
    pub d: Array2<f64>,
    pub f: Array2<f64>,
    pub v_prime: Array2<f64>,
    pub v_dprime: Array2<f64>,
    pub t_prime: Array2<f64>,
    pub v_bar: Array1<f64>,
    pub t_bar: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanLogits {
    pub v_start: Vec<f64>,
    pub v_end: Vec<f64>,
    /// Masked positions hold [`MASKED_LOGIT`].
    pub t_start: Vec<f64>,
    pub t_end: Vec<f64>,
    /// True on subtitle tokens.
    pub t_mask: Vec<bool>,
}

impl SpanLogits {
    pub fn has_text(&self) -> bool {
        self.t_mask.iter().any(|&m| m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CqaVars {
    pub g: Var,
    pub g_r: Var,
    pub g_c: Var,
    pub d: Var,
    pub f: Var,
}

/// Graph handles for every intermediate of [`Builder::forward`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub v: Var,
    pub t: Var,
    pub cqa: CqaVars,
    pub v_prime: Var,
    pub v_dprime: Var,
    pub t_prime: Var,
    pub v_bar: Var,
    pub t_bar: Var,
    pub v_start: Var,
    pub v_end: Var,
    pub t_start: Var,
    pub t_end: Var,
    pub t_mask: Vec<bool>,
}

/// Records the forward computation on a [`Graph`], binding each parameter once.
pub struct Builder<'p> {
    pub graph: Graph,
    params: &'p ModelParams,
    bound: Vec<Option<Var>>,
}

fn column(v: &Array2<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

impl<'p> Builder<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: vec![None; ParamKey::ALL.len()],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn param(&mut self, key: ParamKey) -> Var {
        if let Some(v) = self.bound[key as usize] {
            return v;
        }
        let v = self.graph.leaf(self.params.get(key).clone());
        self.bound[key as usize] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.graph.constant(value)
    }

    /// Collects parameter gradients from a finished backward pass.
    pub fn param_grads(&self, grads: &mut Grads) -> ParamGrads {
        let tensors = ParamKey::ALL
            .iter()
            .map(|&k| {
                self.bound[k as usize]
                    .and_then(|v| grads.take(v))
                    .unwrap_or_else(|| Array2::zeros(self.params.get(k).raw_dim()))
            })
            .collect();
        ParamGrads(tensors)
    }

    fn linear(&mut self, x: Var, w: ParamKey, b: ParamKey) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.graph.matmul(x, w);
        self.graph.add_row(y, b)
    }

    pub fn embed_video(&mut self, raw: Var) -> Var {
        let y = self.linear(raw, ParamKey::VideoWeight, ParamKey::VideoBias);
        self.graph.relu(y)
    }

    pub fn embed_text(&mut self, ids: &[usize]) -> Var {
        let table = self.param(ParamKey::TokenEmbedding);
        self.graph.gather(table, ids)
    }

    /// Trilinear similarity, both softmax normalizations, and the two
    /// attention read-outs `D = G_r T` and `F = G_c G_rᵀ V`.
    pub fn cqa_fuse(&mut self, v: Var, t: Var) -> CqaVars {
        let wv = self.param(ParamKey::CqaVideo);
        let wt = self.param(ParamKey::CqaText);
        let wj = self.param(ParamKey::CqaJoint);
        let g = &mut self.graph;
        let vj = g.mul_row(v, wj);
        let joint = g.matmul_t(vj, t);
        let sv = g.matmul(v, wv);
        let st = g.matmul(t, wt);
        let st_row = g.transpose(st);
        let with_v = g.add_col(joint, sv);
        let sim = g.add_row(with_v, st_row);
        let g_r = g.softmax_rows(sim);
        let g_c = g.softmax_cols(sim);
        let d = g.matmul(g_r, t);
        let rv = {
            let g_rt = g.transpose(g_r);
            g.matmul(g_rt, v)
        };
        let f = g.matmul(g_c, rv);
        CqaVars {
            g: sim,
            g_r,
            g_c,
            d,
            f,
        }
    }

    pub fn context_query_concat(&mut self, v: Var, d: Var, f: Var) -> Var {
        let vd = self.graph.mul(v, d);
        let vf = self.graph.mul(v, f);
        let cat = self.graph.concat_cols(&[v, d, vd, vf]);
        let y = self.linear(cat, ParamKey::FfnCWeight, ParamKey::FfnCBias);
        self.graph.relu(y)
    }

    /// Cross attention of `V′` over the text, concatenated with the
    /// video-aligned text `G_r T`, then a same-padded 1-D convolution.
    pub fn video_text_conv(&mut self, v_prime: Var, t: Var, g_r: Var) -> Var {
        let wq = self.param(ParamKey::AttnQuery);
        let wk = self.param(ParamKey::AttnKey);
        let scale = 1.0 / (self.config().d as f64).sqrt();
        let kernel = self.config().kernel_size as isize;
        let g = &mut self.graph;
        let q = g.matmul(v_prime, wq);
        let k = g.matmul(t, wk);
        let scores = g.matmul_t(q, k);
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores);
        let attended = g.matmul(p, t);
        let aligned = g.matmul(g_r, t);
        let x = g.concat_cols(&[attended, aligned]);

        let half = kernel / 2;
        let unfolded = if kernel == 1 {
            x
        } else {
            let taps: Vec<Var> = (-half..=half).map(|o| g.shift_rows(x, o)).collect();
            g.concat_cols(&taps)
        };
        let y = self.linear(unfolded, ParamKey::ConvWeight, ParamKey::ConvBias);
        self.graph.relu(y)
    }

    /// Returns `(T′, V̄, T̄)` with `T̄[j] = V̄ + T′[j]`.
    pub fn text_projection_broadcast(&mut self, t: Var, v_dprime: Var) -> (Var, Var, Var) {
        let y = self.linear(t, ParamKey::FfnPWeight, ParamKey::FfnPBias);
        let t_prime = self.graph.relu(y);
        let v_bar = self.graph.mean_rows(v_dprime);
        let t_bar = self.graph.add_row(t_prime, v_bar);
        (t_prime, v_bar, t_bar)
    }

    fn lstm(&mut self, x: Var, wx: ParamKey, wh: ParamKey, b: ParamKey) -> Var {
        let d = self.config().d;
        let steps = self.graph.value(x).nrows();
        let xw = self.linear(x, wx, b);
        let wh = self.param(wh);
        let g = &mut self.graph;
        let mut h = g.constant(Array2::zeros((1, d)));
        let mut c = g.constant(Array2::zeros((1, d)));
        let mut outs = Vec::with_capacity(steps);
        for step in 0..steps {
            let xs = g.rows(xw, step, 1);
            let hs = g.matmul(h, wh);
            let z = g.add(xs, hs);
            let zi = g.cols(z, 0, d);
            let zf = g.cols(z, d, d);
            let zg = g.cols(z, 2 * d, d);
            let zo = g.cols(z, 3 * d, d);
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            outs.push(h);
        }
        g.stack_rows(&outs)
    }

    fn head(&mut self, x: Var, w: ParamKey, b: ParamKey) -> Var {
        self.linear(x, w, b)
    }

    pub fn visual_predict(&mut self, v_dprime: Var) -> (Var, Var) {
        use ParamKey::*;
        let hs = self.lstm(v_dprime, LstmStartInput, LstmStartHidden, LstmStartBias);
        let start = self.head(hs, VisualStartHead, VisualStartBias);
        let he = self.lstm(v_dprime, LstmEndInput, LstmEndHidden, LstmEndBias);
        let end = self.head(he, VisualEndHead, VisualEndBias);
        (start, end)
    }

    /// Scores every token; masked positions are overwritten with [`MASKED_LOGIT`].
    pub fn textual_predict(&mut self, t_bar: Var, mask: &[bool]) -> (Var, Var) {
        use ParamKey::*;
        let s = self.head(t_bar, TextualStartHead, TextualStartBias);
        let e = self.head(t_bar, TextualEndHead, TextualEndBias);
        let s = self.graph.mask_rows(s, mask, MASKED_LOGIT);
        let e = self.graph.mask_rows(e, mask, MASKED_LOGIT);
        (s, e)
    }

    pub fn forward(&mut self, sample: &Sample) -> Result<ForwardVars> {
        let cfg = *self.config();
        let raw = features_matrix(sample, cfg.d_in)?;
        let ids = checked_ids(sample, cfg.vocab_size)?;
        let t_mask = token_layout(sample).text_mask();

        let x = self.constant(raw);
        let v = self.embed_video(x);
        let t = self.embed_text(&ids);
        let cqa = self.cqa_fuse(v, t);
        let v_prime = self.context_query_concat(v, cqa.d, cqa.f);
        let v_dprime = self.video_text_conv(v_prime, t, cqa.g_r);
        let (t_prime, v_bar, t_bar) = self.text_projection_broadcast(t, v_dprime);
        let (v_start, v_end) = self.visual_predict(v_dprime);
        let (t_start, t_end) = self.textual_predict(t_bar, &t_mask);
        Ok(ForwardVars {
            v,
            t,
            cqa,
            v_prime,
            v_dprime,
            t_prime,
            v_bar,
            t_bar,
            v_start,
            v_end,
            t_start,
            t_end,
            t_mask,
        })
    }

    pub fn fusion_state(&self, fv: &ForwardVars) -> FusionState {
        let val = |v: Var| self.graph.value(v).clone();
        FusionState {
            v: val(fv.v),
            t: val(fv.t),
            g: val(fv.cqa.g),
            g_r: val(fv.cqa.g_r),
            g_c: val(fv.cqa.g_c),
            d: val(fv.cqa.d),
            f: val(fv.cqa.f),
            v_prime: val(fv.v_prime),
            v_dprime: val(fv.v_dprime),
            t_prime: val(fv.t_prime),
            v_bar: self.graph.value(fv.v_bar).row(0).to_owned(),
            t_bar: val(fv.t_bar),
        }
    }

    pub fn span_logits(&self, fv: &ForwardVars) -> SpanLogits {
        SpanLogits {
            v_start: column(self.graph.value(fv.v_start)),
            v_end: column(self.graph.value(fv.v_end)),
            t_start: column(self.graph.value(fv.t_start)),
            t_end: column(self.graph.value(fv.t_end)),
            t_mask: fv.t_mask.clone(),
        }
    }
}

fn features_matrix(sample: &Sample, d_in: usize) -> Result<Array2<f64>> {
    let k = sample.video_features.len();
    if sample.d_in() != d_in {
        return Err(Error::Shape {
            op: "embed_video",
            expected: format!("{k}x{d_in}"),
            got: format!("{k}x{}", sample.d_in()),
        });
    }
    let flat: Vec<f64> = sample.video_features.iter().flatten().copied().collect();
    Array2::from_shape_vec((k, d_in), flat).map_err(|_| Error::Shape {
        op: "embed_video",
        expected: format!("{k}x{d_in}"),
        got: "ragged rows".into(),
    })
}

fn checked_ids(sample: &Sample, vocab_size: usize) -> Result<Vec<usize>> {
    sample
        .token_ids()
        .into_iter()
        .map(|id| {
            if (id as usize) < vocab_size {
                Ok(id as usize)
            } else {
                Err(Error::TokenOutOfVocab { id, vocab_size })
            }
        })
        .collect()
}

fn check_width(op: &'static str, x: &Array2<f64>, width: usize) -> Result<()> {
    if x.ncols() != width {
        return Err(Error::Shape {
            op,
            expected: format!("_x{width}"),
            got: format!("{}x{}", x.nrows(), x.ncols()),
        });
    }
    Ok(())
}

pub fn embed_video(raw: &Array2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    check_width("embed_video", raw, params.config.d_in)?;
    let mut b = Builder::new(params);
    let x = b.constant(raw.clone());
    let v = b.embed_video(x);
    Ok(b.graph.value(v).clone())
}

pub fn embed_text(token_ids: &[u32], params: &ModelParams) -> Result<Array2<f64>> {
    let vocab_size = params.config.vocab_size;
    let ids = token_ids
        .iter()
        .map(|&id| {
            if (id as usize) < vocab_size {
                Ok(id as usize)
            } else {
                Err(Error::TokenOutOfVocab { id, vocab_size })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = Builder::new(params);
    let t = b.embed_text(&ids);
    Ok(b.graph.value(t).clone())
}

/// Output of [`cqa_fuse`].
#[derive(Debug, Clone)]
pub struct CqaOutput {
    pub g: Array2<f64>,
    pub g_r: Array2<f64>,
    pub g_c: Array2<f64>,
    pub d: Array2<f64>,
    pub f: Array2<f64>,
}

pub fn cqa_fuse(v: &Array2<f64>, t: &Array2<f64>, params: &ModelParams) -> Result<CqaOutput> {
    let d = params.config.d;
    check_width("cqa_fuse", v, d)?;
    check_width("cqa_fuse", t, d)?;
    let mut b = Builder::new(params);
    let (v, t) = (b.constant(v.clone()), b.constant(t.clone()));
    let c = b.cqa_fuse(v, t);
    let val = |x: Var| b.graph.value(x).clone();
    Ok(CqaOutput {
        g: val(c.g),
        g_r: val(c.g_r),
        g_c: val(c.g_c),
        d: val(c.d),
        f: val(c.f),
    })
}

pub fn context_query_concat(
    v: &Array2<f64>,
    d: &Array2<f64>,
    f: &Array2<f64>,
    params: &ModelParams,
) -> Result<Array2<f64>> {
    let width = params.config.d;
    for x in [v, d, f] {
        check_width("context_query_concat", x, width)?;
    }
    let mut b = Builder::new(params);
    let (v, d, f) = (b.constant(v.clone()), b.constant(d.clone()), b.constant(f.clone()));
    let y = b.context_query_concat(v, d, f);
    Ok(b.graph.value(y).clone())
}

pub fn video_text_conv(
    v_prime: &Array2<f64>,
    t: &Array2<f64>,
    g_r: &Array2<f64>,
    params: &ModelParams,
) -> Result<Array2<f64>> {
    check_width("video_text_conv", v_prime, params.config.d)?;
    check_width("video_text_conv", t, params.config.d)?;
    if g_r.dim() != (v_prime.nrows(), t.nrows()) {
        return Err(Error::Shape {
            op: "video_text_conv",
            expected: format!("{}x{}", v_prime.nrows(), t.nrows()),
            got: format!("{:?}", g_r.dim()),
        });
    }
    let mut b = Builder::new(params);
    let (vp, t, gr) = (b.constant(v_prime.clone()), b.constant(t.clone()), b.constant(g_r.clone()));
    let y = b.video_text_conv(vp, t, gr);
    Ok(b.graph.value(y).clone())
}

pub fn text_projection_broadcast(
    t: &Array2<f64>,
    v_dprime: &Array2<f64>,
    params: &ModelParams,
) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    check_width("text_projection_broadcast", t, params.config.d)?;
    check_width("text_projection_broadcast", v_dprime, params.config.d)?;
    let mut b = Builder::new(params);
    let (t, vd) = (b.constant(t.clone()), b.constant(v_dprime.clone()));
    let (tp, vb, tb) = b.text_projection_broadcast(t, vd);
    let g = &b.graph;
    Ok((g.value(tp).clone(), g.value(vb).row(0).to_owned(), g.value(tb).clone()))
}

pub fn visual_predict(v_dprime: &Array2<f64>, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    check_width("visual_predict", v_dprime, params.config.d)?;
    let mut b = Builder::new(params);
    let x = b.constant(v_dprime.clone());
    let (s, e) = b.visual_predict(x);
    Ok((column(b.graph.value(s)), column(b.graph.value(e))))
}

pub fn textual_predict(
    t_bar: &Array2<f64>,
    t_mask: &[bool],
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_width("textual_predict", t_bar, params.config.d)?;
    if t_mask.len() != t_bar.nrows() {
        return Err(Error::LengthMismatch {
            left: t_mask.len(),
            right: t_bar.nrows(),
        });
    }
    if !t_mask.iter().any(|&m| m) {
        return Err(Error::NoTextTarget);
    }
    let mut b = Builder::new(params);
    let x = b.constant(t_bar.clone());
    let (s, e) = b.textual_predict(x, t_mask);
    Ok((column(b.graph.value(s)), column(b.graph.value(e))))
}

pub fn forward(sample: &Sample, params: &ModelParams) -> Result<(FusionState, SpanLogits)> {
    let mut b = Builder::new(params);
    let fv = b.forward(sample)?;
    Ok((b.fusion_state(&fv), b.span_logits(&fv)))
}

/// Span logits only; skips copying the fusion intermediates.
pub fn predict_logits(sample: &Sample, params: &ModelParams) -> Result<SpanLogits> {
    let mut b = Builder::new(params);
    let fv = b.forward(sample)?;
    Ok(b.span_logits(&fv))
}
