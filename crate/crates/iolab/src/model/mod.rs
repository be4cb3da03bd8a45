//! Encoder-decoder transformer over insertion canvases.
//!
//! The decoder consumes `[start] hypothesis [end]` with no causal mask, so a
//! hypothesis of length `n` yields `n + 2` states and `n + 1` slot vectors
//! (adjacent-pair concatenation through an affine map and ReLU). Each slot
//! vector produces a content softmax tied to the decoder embedding and, via a
//! learned query vector, one logit of the location softmax.
//!
//! Parameters live in named f64 arrays whose values are always exactly
//! representable in f32; computation runs in f64 throughout. Checkpoints
//! store f32, so save then load reproduces parameters bit for bit. The
//! backward pass is hand-derived and exact, which finite differences verify
//! (see the gradient tests here and the heavier end-to-end check in
//! `tests/acceptance.rs`).

mod checkpoint;
mod linalg;
mod net;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{TokenId, END, NUM_SPECIALS, START};
use crate::oracle::{location_kl, slot_kl, OraclePolicy};

use linalg::{add_scaled, col_sum_acc, dot, gemm_nn, gemm_nt, gemm_tn, Mat};
pub(crate) use linalg::log_softmax_in_place;
use net::{
    dropout_bwd, dropout_fwd, ffn_bwd, ffn_fwd, mha_bwd, mha_fwd, residual_ln_bwd,
    residual_ln_fwd, AttnCache, FfnCache, SubCache,
};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("source sequence is empty")]
    EmptySource,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at batch item {index}")]
    NonFiniteLoss { index: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and regularisation knobs. `vocab_size` counts the specials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: d_model 64, 2 layers, 2 heads, d_ffn 128,
    /// dropout 0.1, max_len 64.
    pub fn with_vocab(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ffn: 128,
            vocab_size,
            max_len: 64,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.d_ffn == 0 {
            return bad("n_layers and d_ffn must be >= 1".into());
        }
        if self.vocab_size <= NUM_SPECIALS {
            return bad(format!(
                "vocab_size {} leaves no room for content tokens",
                self.vocab_size
            ));
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ln: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub ln: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ffn: FfnParams,
}

/// All weights of one model. The same struct carries gradients and optimizer
/// moments, which share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub enc_embed: Vec<f64>,
    pub dec_embed: Vec<f64>,
    pub enc_layers: Vec<EncoderLayerParams>,
    pub dec_layers: Vec<DecoderLayerParams>,
    pub slot_w: Vec<f64>,
    pub slot_b: Vec<f64>,
    pub loc_q: Vec<f64>,
}

pub type Gradients = Parameters;

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Parameters {
        let (d, f, v) = (cfg.d_model, cfg.d_ffn, cfg.vocab_size);
        let ln = || LayerNormParams { gain: vec![0.0; d], bias: vec![0.0; d] };
        let attn = || AttentionParams {
            wq: vec![0.0; d * d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            wo: vec![0.0; d * d],
            ln: ln(),
        };
        let ffn = || FfnParams {
            w1: vec![0.0; d * f],
            b1: vec![0.0; f],
            w2: vec![0.0; f * d],
            b2: vec![0.0; d],
            ln: ln(),
        };
        Parameters {
            enc_embed: vec![0.0; v * d],
            dec_embed: vec![0.0; v * d],
            enc_layers: (0..cfg.n_layers)
                .map(|_| EncoderLayerParams { attn: attn(), ffn: ffn() })
                .collect(),
            dec_layers: (0..cfg.n_layers)
                .map(|_| DecoderLayerParams { self_attn: attn(), cross_attn: attn(), ffn: ffn() })
                .collect(),
            slot_w: vec![0.0; 2 * d * d],
            slot_b: vec![0.0; d],
            loc_q: vec![0.0; d],
        }
    }

    /// All arrays with stable names, in the canonical (checkpoint) order.
    pub fn named_arrays(&self) -> Vec<(String, &Vec<f64>)> {
        fn attn<'p>(out: &mut Vec<(String, &'p Vec<f64>)>, pre: String, p: &'p AttentionParams) {
            out.push((format!("{pre}.wq"), &p.wq));
            out.push((format!("{pre}.wk"), &p.wk));
            out.push((format!("{pre}.wv"), &p.wv));
            out.push((format!("{pre}.wo"), &p.wo));
            out.push((format!("{pre}.ln.gain"), &p.ln.gain));
            out.push((format!("{pre}.ln.bias"), &p.ln.bias));
        }
        fn ffn<'p>(out: &mut Vec<(String, &'p Vec<f64>)>, pre: String, p: &'p FfnParams) {
            out.push((format!("{pre}.w1"), &p.w1));
            out.push((format!("{pre}.b1"), &p.b1));
            out.push((format!("{pre}.w2"), &p.w2));
            out.push((format!("{pre}.b2"), &p.b2));
            out.push((format!("{pre}.ln.gain"), &p.ln.gain));
            out.push((format!("{pre}.ln.bias"), &p.ln.bias));
        }
        let mut out = Vec::new();
        out.push(("enc_embed".to_string(), &self.enc_embed));
        out.push(("dec_embed".to_string(), &self.dec_embed));
        for (i, l) in self.enc_layers.iter().enumerate() {
            attn(&mut out, format!("enc{i}.attn"), &l.attn);
            ffn(&mut out, format!("enc{i}.ffn"), &l.ffn);
        }
        for (i, l) in self.dec_layers.iter().enumerate() {
            attn(&mut out, format!("dec{i}.self"), &l.self_attn);
            attn(&mut out, format!("dec{i}.cross"), &l.cross_attn);
            ffn(&mut out, format!("dec{i}.ffn"), &l.ffn);
        }
        out.push(("slot.w".to_string(), &self.slot_w));
        out.push(("slot.b".to_string(), &self.slot_b));
        out.push(("loc.q".to_string(), &self.loc_q));
        out
    }

    pub fn named_arrays_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        fn attn<'p>(out: &mut Vec<(String, &'p mut Vec<f64>)>, pre: String, p: &'p mut AttentionParams) {
            out.push((format!("{pre}.wq"), &mut p.wq));
            out.push((format!("{pre}.wk"), &mut p.wk));
            out.push((format!("{pre}.wv"), &mut p.wv));
            out.push((format!("{pre}.wo"), &mut p.wo));
            out.push((format!("{pre}.ln.gain"), &mut p.ln.gain));
            out.push((format!("{pre}.ln.bias"), &mut p.ln.bias));
        }
        fn ffn<'p>(out: &mut Vec<(String, &'p mut Vec<f64>)>, pre: String, p: &'p mut FfnParams) {
            out.push((format!("{pre}.w1"), &mut p.w1));
            out.push((format!("{pre}.b1"), &mut p.b1));
            out.push((format!("{pre}.w2"), &mut p.w2));
            out.push((format!("{pre}.b2"), &mut p.b2));
            out.push((format!("{pre}.ln.gain"), &mut p.ln.gain));
            out.push((format!("{pre}.ln.bias"), &mut p.ln.bias));
        }
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        out.push(("enc_embed".to_string(), &mut self.enc_embed));
        out.push(("dec_embed".to_string(), &mut self.dec_embed));
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            attn(&mut out, format!("enc{i}.attn"), &mut l.attn);
            ffn(&mut out, format!("enc{i}.ffn"), &mut l.ffn);
        }
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            attn(&mut out, format!("dec{i}.self"), &mut l.self_attn);
            attn(&mut out, format!("dec{i}.cross"), &mut l.cross_attn);
            ffn(&mut out, format!("dec{i}.ffn"), &mut l.ffn);
        }
        out.push(("slot.w".to_string(), &mut self.slot_w));
        out.push(("slot.b".to_string(), &mut self.slot_b));
        out.push(("loc.q".to_string(), &mut self.loc_q));
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    /// Rounds every value to the nearest f32. Init and every optimizer step
    /// end with this, so checkpoints (stored as f32) are lossless.
    pub fn round_to_f32(&mut self) {
        for (_, arr) in self.named_arrays_mut() {
            for v in arr.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Glorot-uniform initialisation, drawn in canonical array order from
/// `ChaCha8Rng::seed_from_u64(cfg.seed)`; layer-norm gains start at 1 and all
/// biases at 0.
pub fn init(cfg: &ModelConfig) -> Result<Parameters, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = Parameters::zeros(cfg);
    let d = cfg.d_model as f64;
    let emb_a = (3.0 / d).sqrt();
    let proj_a = (3.0 / d).sqrt();
    let ffn_a = (6.0 / (cfg.d_model + cfg.d_ffn) as f64).sqrt();
    let slot_a = (2.0 / d).sqrt();
    let loc_a = (6.0 / (d + 1.0)).sqrt();

    fn fill(rng: &mut ChaCha8Rng, v: &mut [f64], a: f64) {
        for x in v.iter_mut() {
            *x = rng.gen_range(-a..a);
        }
    }
    fn init_attn(rng: &mut ChaCha8Rng, p: &mut AttentionParams, a: f64) {
        fill(rng, &mut p.wq, a);
        fill(rng, &mut p.wk, a);
        fill(rng, &mut p.wv, a);
        fill(rng, &mut p.wo, a);
        p.ln.gain.fill(1.0);
    }
    fn init_ffn(rng: &mut ChaCha8Rng, p: &mut FfnParams, a: f64) {
        fill(rng, &mut p.w1, a);
        fill(rng, &mut p.w2, a);
        p.ln.gain.fill(1.0);
    }

    fill(&mut rng, &mut p.enc_embed, emb_a);
    fill(&mut rng, &mut p.dec_embed, emb_a);
    for l in &mut p.enc_layers {
        init_attn(&mut rng, &mut l.attn, proj_a);
        init_ffn(&mut rng, &mut l.ffn, ffn_a);
    }
    for l in &mut p.dec_layers {
        init_attn(&mut rng, &mut l.self_attn, proj_a);
        init_attn(&mut rng, &mut l.cross_attn, proj_a);
        init_ffn(&mut rng, &mut l.ffn, ffn_a);
    }
    fill(&mut rng, &mut p.slot_w, slot_a);
    fill(&mut rng, &mut p.loc_q, loc_a);
    p.round_to_f32();
    Ok(p)
}

/// Per-slot predictive distributions for one canvas: a content distribution
/// `p(c | l)` for every slot `l` and a location distribution `p(l)` across
/// slots, both stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDistributions {
    n_slots: usize,
    vocab_size: usize,
    content_logp: Vec<f64>,
    location_logp: Vec<f64>,
}

impl SlotDistributions {
    /// Wraps already-normalized log-probabilities. `content_logp` is row-major
    /// `n_slots x vocab_size`, `location_logp` has one entry per slot.
    pub fn new(content_logp: Vec<f64>, location_logp: Vec<f64>, vocab_size: usize) -> Self {
        assert!(vocab_size > 0 && !location_logp.is_empty());
        assert_eq!(content_logp.len(), location_logp.len() * vocab_size);
        SlotDistributions {
            n_slots: location_logp.len(),
            vocab_size,
            content_logp,
            location_logp,
        }
    }

    /// Builds distributions from unnormalized logits (applies log-softmax to
    /// each content row and to the location vector).
    pub fn from_logits(content_logits: Vec<f64>, location_logits: Vec<f64>, vocab_size: usize) -> Self {
        let mut d = SlotDistributions::new(content_logits, location_logits, vocab_size);
        for l in 0..d.n_slots {
            log_softmax_in_place(&mut d.content_logp[l * vocab_size..(l + 1) * vocab_size]);
        }
        log_softmax_in_place(&mut d.location_logp);
        d
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn content_logp(&self, slot: usize) -> &[f64] {
        &self.content_logp[slot * self.vocab_size..(slot + 1) * self.vocab_size]
    }

    pub fn location_logp(&self, slot: usize) -> f64 {
        self.location_logp[slot]
    }

    /// log p(c, l) = log p(c | l) + log p(l).
    pub fn joint_logp(&self, content: usize, slot: usize) -> f64 {
        self.content_logp(slot)[content] + self.location_logp(slot)
    }
}

struct EncLayerCache {
    attn: AttnCache,
    attn_sub: SubCache,
    ffn: FfnCache,
    ffn_sub: SubCache,
}

struct DecLayerCache {
    self_attn: AttnCache,
    self_sub: SubCache,
    cross: AttnCache,
    cross_sub: SubCache,
    ffn: FfnCache,
    ffn_sub: SubCache,
}

struct ForwardCache {
    src_tokens: Vec<TokenId>,
    dec_tokens: Vec<TokenId>,
    enc_in_drop: Option<Vec<f64>>,
    dec_in_drop: Option<Vec<f64>>,
    enc_layers: Vec<EncLayerCache>,
    dec_layers: Vec<DecLayerCache>,
    enc_out: Mat,
    slot_in: Mat,
    slot_vec: Mat,
}

fn sinusoid(pos: usize, idx: usize, d: usize) -> f64 {
    let i2 = (idx / 2 * 2) as f64;
    let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
    if idx % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn embed_tokens(embed: &[f64], tokens: &[TokenId], d: usize, positions: bool) -> Mat {
    let scale = (d as f64).sqrt();
    let mut x = Mat::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        let row = x.row_mut(i);
        add_scaled(row, &embed[t * d..(t + 1) * d], scale);
        if positions {
            for (j, v) in row.iter_mut().enumerate() {
                *v += sinusoid(i, j, d);
            }
        }
    }
    x
}

fn validate_inputs(cfg: &ModelConfig, source: &[TokenId], hypothesis: &[TokenId]) -> Result<(), ModelError> {
    if source.is_empty() {
        return Err(ModelError::EmptySource);
    }
    for &len in &[source.len(), hypothesis.len()] {
        if len > cfg.max_len {
            return Err(ModelError::SequenceTooLong { len, max_len: cfg.max_len });
        }
    }
    for &t in source.iter().chain(hypothesis) {
        if t >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange { id: t, vocab_size: cfg.vocab_size });
        }
    }
    Ok(())
}

fn forward_full(
    params: &Parameters,
    cfg: &ModelConfig,
    source: &[TokenId],
    hypothesis: &[TokenId],
    mut rng: Option<&mut ChaCha8Rng>,
    positions: bool,
) -> Result<(SlotDistributions, ForwardCache), ModelError> {
    validate_inputs(cfg, source, hypothesis)?;
    let (d, nh) = (cfg.d_model, cfg.n_heads);
    let rate = cfg.dropout;

    let mut x = embed_tokens(&params.enc_embed, source, d, positions);
    let enc_in_drop = dropout_fwd(&mut x, rate, rng.as_deref_mut());
    let mut enc_layers = Vec::with_capacity(params.enc_layers.len());
    for lp in &params.enc_layers {
        let (a_out, attn) = mha_fwd(&x, &x, &lp.attn, nh);
        let (x1, attn_sub) = residual_ln_fwd(x, a_out, &lp.attn.ln, rate, rng.as_deref_mut());
        let (f_out, ffn) = ffn_fwd(&x1, &lp.ffn);
        let (x2, ffn_sub) = residual_ln_fwd(x1, f_out, &lp.ffn.ln, rate, rng.as_deref_mut());
        x = x2;
        enc_layers.push(EncLayerCache { attn, attn_sub, ffn, ffn_sub });
    }
    let enc_out = x;

    let mut dec_tokens = Vec::with_capacity(hypothesis.len() + 2);
    dec_tokens.push(START);
    dec_tokens.extend_from_slice(hypothesis);
    dec_tokens.push(END);
    let mut y = embed_tokens(&params.dec_embed, &dec_tokens, d, positions);
    let dec_in_drop = dropout_fwd(&mut y, rate, rng.as_deref_mut());
    let mut dec_layers = Vec::with_capacity(params.dec_layers.len());
    for lp in &params.dec_layers {
        let (s_out, self_attn) = mha_fwd(&y, &y, &lp.self_attn, nh);
        let (y1, self_sub) = residual_ln_fwd(y, s_out, &lp.self_attn.ln, rate, rng.as_deref_mut());
        let (c_out, cross) = mha_fwd(&y1, &enc_out, &lp.cross_attn, nh);
        let (y2, cross_sub) = residual_ln_fwd(y1, c_out, &lp.cross_attn.ln, rate, rng.as_deref_mut());
        let (f_out, ffn) = ffn_fwd(&y2, &lp.ffn);
        let (y3, ffn_sub) = residual_ln_fwd(y2, f_out, &lp.ffn.ln, rate, rng.as_deref_mut());
        y = y3;
        dec_layers.push(DecLayerCache { self_attn, self_sub, cross, cross_sub, ffn, ffn_sub });
    }
    let dec_out = y;

    let n_slots = hypothesis.len() + 1;
    let mut slot_in = Mat::zeros(n_slots, 2 * d);
    for l in 0..n_slots {
        slot_in.row_mut(l)[..d].copy_from_slice(dec_out.row(l));
        slot_in.row_mut(l)[d..].copy_from_slice(dec_out.row(l + 1));
    }
    let mut slot_vec = Mat::zeros(n_slots, d);
    gemm_nn(&mut slot_vec.v, &slot_in.v, &params.slot_w, n_slots, 2 * d, d, false);
    for l in 0..n_slots {
        for (v, &b) in slot_vec.row_mut(l).iter_mut().zip(&params.slot_b) {
            *v = (*v + b).max(0.0);
        }
    }

    let mut content = vec![0.0; n_slots * cfg.vocab_size];
    gemm_nt(&mut content, &slot_vec.v, &params.dec_embed, n_slots, d, cfg.vocab_size, false);
    let location: Vec<f64> = (0..n_slots).map(|l| dot(slot_vec.row(l), &params.loc_q)).collect();
    let dists = SlotDistributions::from_logits(content, location, cfg.vocab_size);

    Ok((
        dists,
        ForwardCache {
            src_tokens: source.to_vec(),
            dec_tokens,
            enc_in_drop,
            dec_in_drop,
            enc_layers,
            dec_layers,
            enc_out,
            slot_in,
            slot_vec,
        },
    ))
}

/// Evaluation-mode forward pass (no dropout).
pub fn forward(
    params: &Parameters,
    cfg: &ModelConfig,
    source: &[TokenId],
    hypothesis: &[TokenId],
) -> Result<SlotDistributions, ModelError> {
    forward_full(params, cfg, source, hypothesis, None, true).map(|t| t.0)
}

/// Diagnostic forward pass with positional encodings removed; slot outputs
/// then depend only on the flanking token pair and the token multiset.
pub fn forward_unpositioned(
    params: &Parameters,
    cfg: &ModelConfig,
    source: &[TokenId],
    hypothesis: &[TokenId],
) -> Result<SlotDistributions, ModelError> {
    forward_full(params, cfg, source, hypothesis, None, false).map(|t| t.0)
}

/// One training example: a rolled-in hypothesis and its oracle targets.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub source: &'a [TokenId],
    pub hypothesis: &'a [TokenId],
    pub policy: &'a OraclePolicy,
}

fn example_loss(dists: &SlotDistributions, policy: &OraclePolicy) -> Result<f64, ModelError> {
    let content = slot_kl(policy, dists)?;
    let location = location_kl(policy, dists)?;
    Ok(content.sequence + location)
}

/// Batch-mean training loss (per-slot content KL averaged over slots, plus
/// the location KL), evaluated without dropout. `backward` with no rng must
/// return exactly this value.
pub fn loss(params: &Parameters, cfg: &ModelConfig, items: &[TrainItem]) -> Result<f64, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for item in items {
        let dists = forward(params, cfg, item.source, item.hypothesis)?;
        total += example_loss(&dists, item.policy)?;
    }
    Ok(total / items.len() as f64)
}

/// Forward and exact backward over a batch. With `rng` present, dropout masks
/// are sampled per example in batch order. The oracle policies are constants
/// here: no gradient flows into them.
pub fn backward(
    params: &Parameters,
    cfg: &ModelConfig,
    items: &[TrainItem],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients), ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = Parameters::zeros(cfg);
    let weight = 1.0 / items.len() as f64;
    let mut total = 0.0;
    for (index, item) in items.iter().enumerate() {
        let (dists, cache) =
            forward_full(params, cfg, item.source, item.hypothesis, rng.as_deref_mut(), true)?;
        let example = example_loss(&dists, item.policy)?;
        if !example.is_finite() {
            return Err(ModelError::NonFiniteLoss { index });
        }
        total += example;

        let n_slots = dists.n_slots();
        let v = cfg.vocab_size;
        let ws = weight / n_slots as f64;
        let mut dz = Mat::zeros(n_slots, v);
        for l in 0..n_slots {
            let row = dz.row_mut(l);
            for (rv, &lp) in row.iter_mut().zip(dists.content_logp(l)) {
                *rv = lp.exp() * ws;
            }
            for &(c, q) in item.policy.contents(l) {
                row[c] -= q * ws;
            }
        }
        let du: Vec<f64> = (0..n_slots)
            .map(|l| (dists.location_logp(l).exp() - item.policy.location_target()[l]) * weight)
            .collect();
        backprop(params, cfg, &cache, &dz, &du, &mut grads);
    }
    Ok((total * weight, grads))
}

fn backprop(
    params: &Parameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    dz: &Mat,
    du: &[f64],
    grads: &mut Gradients,
) {
    let (d, nh, v) = (cfg.d_model, cfg.n_heads, cfg.vocab_size);
    let n_slots = dz.r;

    // Content logits Z = S E^T and location logits u_l = s_l . q.
    let mut dslot = Mat::zeros(n_slots, d);
    gemm_nn(&mut dslot.v, &dz.v, &params.dec_embed, n_slots, v, d, false);
    gemm_tn(&mut grads.dec_embed, &dz.v, &cache.slot_vec.v, n_slots, v, d, true);
    for l in 0..n_slots {
        add_scaled(dslot.row_mut(l), &params.loc_q, du[l]);
        add_scaled(&mut grads.loc_q, cache.slot_vec.row(l), du[l]);
    }

    // ReLU and the slot affine map.
    for (dv, &sv) in dslot.v.iter_mut().zip(&cache.slot_vec.v) {
        if sv <= 0.0 {
            *dv = 0.0;
        }
    }
    col_sum_acc(&mut grads.slot_b, &dslot.v, n_slots, d);
    gemm_tn(&mut grads.slot_w, &cache.slot_in.v, &dslot.v, n_slots, 2 * d, d, true);
    let mut dslot_in = Mat::zeros(n_slots, 2 * d);
    gemm_nt(&mut dslot_in.v, &dslot.v, &params.slot_w, n_slots, d, 2 * d, false);

    let mut dy = Mat::zeros(cache.dec_tokens.len(), d);
    for l in 0..n_slots {
        add_scaled(dy.row_mut(l), &dslot_in.row(l)[..d], 1.0);
        add_scaled(dy.row_mut(l + 1), &dslot_in.row(l)[d..], 1.0);
    }

    let mut denc = Mat::zeros(cache.enc_out.r, d);
    for li in (0..params.dec_layers.len()).rev() {
        let lp = &params.dec_layers[li];
        let lc = &cache.dec_layers[li];
        let gl = &mut grads.dec_layers[li];
        let (dz_res, dsub) = residual_ln_bwd(&dy, &lc.ffn_sub, &lp.ffn.ln, &mut gl.ffn.ln);
        let mut dx = dz_res;
        ffn_bwd(&dsub, &lc.ffn_sub.x_in, &lp.ffn, &lc.ffn, &mut gl.ffn, &mut dx);
        let (dz_res, dsub) = residual_ln_bwd(&dx, &lc.cross_sub, &lp.cross_attn.ln, &mut gl.cross_attn.ln);
        let mut dx = dz_res;
        mha_bwd(
            &dsub, &lc.cross_sub.x_in, &cache.enc_out, &lp.cross_attn, &lc.cross, nh,
            &mut gl.cross_attn, &mut dx, Some(&mut denc),
        );
        let (dz_res, dsub) = residual_ln_bwd(&dx, &lc.self_sub, &lp.self_attn.ln, &mut gl.self_attn.ln);
        let mut dx = dz_res;
        mha_bwd(
            &dsub, &lc.self_sub.x_in, &lc.self_sub.x_in, &lp.self_attn, &lc.self_attn, nh,
            &mut gl.self_attn, &mut dx, None,
        );
        dy = dx;
    }
    dropout_bwd(&mut dy, &cache.dec_in_drop);
    let scale = (d as f64).sqrt();
    for (i, &t) in cache.dec_tokens.iter().enumerate() {
        add_scaled(&mut grads.dec_embed[t * d..(t + 1) * d], dy.row(i), scale);
    }

    let mut dy = denc;
    for li in (0..params.enc_layers.len()).rev() {
        let lp = &params.enc_layers[li];
        let lc = &cache.enc_layers[li];
        let gl = &mut grads.enc_layers[li];
        let (dz_res, dsub) = residual_ln_bwd(&dy, &lc.ffn_sub, &lp.ffn.ln, &mut gl.ffn.ln);
        let mut dx = dz_res;
        ffn_bwd(&dsub, &lc.ffn_sub.x_in, &lp.ffn, &lc.ffn, &mut gl.ffn, &mut dx);
        let (dz_res, dsub) = residual_ln_bwd(&dx, &lc.attn_sub, &lp.attn.ln, &mut gl.attn.ln);
        let mut dx = dz_res;
        mha_bwd(
            &dsub, &lc.attn_sub.x_in, &lc.attn_sub.x_in, &lp.attn, &lc.attn, nh,
            &mut gl.attn, &mut dx, None,
        );
        dy = dx;
    }
    dropout_bwd(&mut dy, &cache.enc_in_drop);
    for (i, &t) in cache.src_tokens.iter().enumerate() {
        add_scaled(&mut grads.enc_embed[t * d..(t + 1) * d], dy.row(i), scale);
    }
}

/// Owning convenience wrapper pairing a config with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn init(cfg: ModelConfig) -> Result<Model, ModelError> {
        let params = init(&cfg)?;
        Ok(Model { cfg, params })
    }

    pub fn forward(&self, source: &[TokenId], hypothesis: &[TokenId]) -> Result<SlotDistributions, ModelError> {
        forward(&self.params, &self.cfg, source, hypothesis)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save(path, &self.cfg, &self.params)
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let (cfg, params) = checkpoint::load(path)?;
        Ok(Model { cfg, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::{valid_actions, Canvas};
    use crate::corpus::Vocabulary;
    use crate::oracle::build_policy;
    use crate::orders::{OrderKind, OrderSpec};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 16,
            vocab_size: 10,
            max_len: 16,
            dropout: 0.0,
            seed: 42,
        }
    }

    fn tiny_vocab() -> Vocabulary {
        Vocabulary::from_parts(vec![
            ("apple".into(), 7),
            ("bee".into(), 3),
            ("cat".into(), 3),
            ("dog".into(), 11),
            ("elf".into(), 1),
        ])
    }

    struct Fixture {
        sources: Vec<Vec<TokenId>>,
        hyps: Vec<Vec<TokenId>>,
        policies: Vec<crate::oracle::OraclePolicy>,
    }

    impl Fixture {
        fn items(&self) -> Vec<TrainItem<'_>> {
            (0..self.sources.len())
                .map(|i| TrainItem {
                    source: &self.sources[i],
                    hypothesis: &self.hyps[i],
                    policy: &self.policies[i],
                })
                .collect()
        }
    }

    fn gradcheck_fixture() -> Fixture {
        let vocab = tiny_vocab();
        // One empty hypothesis, one with duplicate tokens and empty slots.
        let c1 = Canvas::from_kept(vec![6, 8], &[]);
        let c2 = Canvas::from_kept(vec![6, 9, 5, 6, 8], &[0, 1, 3]);
        let a1 = valid_actions(&c1).unwrap();
        let a2 = valid_actions(&c2).unwrap();
        let p1 = build_policy(&OrderSpec::new(OrderKind::L2r, &vocab), &a1, 0.5, None).unwrap();
        let p2 = build_policy(&OrderSpec::new(OrderKind::BinaryTree, &vocab), &a2, 1.0, None).unwrap();
        Fixture {
            sources: vec![vec![5, 6, 7], vec![7, 5]],
            hyps: vec![c1.hypothesis().to_vec(), c2.hypothesis().to_vec()],
            policies: vec![p1, p2],
        }
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut cfg = tiny_cfg();
        cfg.n_heads = 3;
        assert!(matches!(cfg.validate(), Err(ModelError::BadConfig(_))));
        let mut cfg = tiny_cfg();
        cfg.vocab_size = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
    }

    #[test]
    fn init_is_seed_deterministic_and_f32_exact() {
        let cfg = tiny_cfg();
        let a = init(&cfg).unwrap();
        let b = init(&cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg;
        cfg2.seed = 43;
        assert_ne!(init(&cfg2).unwrap(), a);
        for (name, arr) in a.named_arrays() {
            for &v in arr.iter() {
                assert_eq!(v, v as f32 as f64, "{name} holds a non-f32 value {v}");
            }
        }
    }

    #[test]
    fn forward_shapes_follow_the_hypothesis() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        // Two-token hypothesis: n + 2 = 4 decoder states, 3 slots.
        let dists = forward(&params, &cfg, &[5, 6, 7], &[7, 9]).unwrap();
        assert_eq!(dists.n_slots(), 3);
        assert_eq!(dists.vocab_size(), 10);
        for l in 0..3 {
            let total: f64 = dists.content_logp(l).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let loc_total: f64 = (0..3).map(|l| dists.location_logp(l).exp()).sum();
        assert!((loc_total - 1.0).abs() < 1e-9);

        let empty = forward(&params, &cfg, &[5], &[]).unwrap();
        assert_eq!(empty.n_slots(), 1);
        assert!((empty.location_logp(0)).abs() < 1e-12, "single slot has probability 1");
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        assert!(matches!(forward(&params, &cfg, &[], &[]), Err(ModelError::EmptySource)));
        assert!(matches!(
            forward(&params, &cfg, &[5, 10], &[]),
            Err(ModelError::TokenOutOfRange { id: 10, .. })
        ));
        let long = vec![5; 17];
        assert!(matches!(
            forward(&params, &cfg, &long, &[]),
            Err(ModelError::SequenceTooLong { len: 17, max_len: 16 })
        ));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        let a = forward(&params, &cfg, &[5, 6], &[7]).unwrap();
        let b = forward(&params, &cfg, &[5, 6], &[7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn without_positions_slot_outputs_depend_only_on_flanks_and_multiset() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        let src = [5, 6];
        // Same token multiset, permuted: shared flank pairs must agree.
        let h1 = [5, 6, 5, 6];
        let h2 = [6, 5, 6, 5];
        let d1 = forward_unpositioned(&params, &cfg, &src, &h1).unwrap();
        let d2 = forward_unpositioned(&params, &cfg, &src, &h2).unwrap();
        // (5, 6) flanks: h1 slots 1 and 3, h2 slot 2.
        for (a, b) in [(1usize, 2usize), (3, 2)] {
            for (x, y) in d1.content_logp(a).iter().zip(d2.content_logp(b)) {
                assert!((x - y).abs() < 1e-9, "slot {a} vs {b}");
            }
        }
        // (6, 5) flanks: h1 slot 2, h2 slots 1 and 3.
        for (x, y) in d1.content_logp(2).iter().zip(d2.content_logp(1)) {
            assert!((x - y).abs() < 1e-9);
        }
        // Positional encodings restore the distinction.
        let p1 = forward(&params, &cfg, &src, &h1).unwrap();
        let p2 = forward(&params, &cfg, &src, &h2).unwrap();
        let diff: f64 = p1
            .content_logp(1)
            .iter()
            .zip(p2.content_logp(2))
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn backward_loss_equals_loss_function_and_is_deterministic() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        let fx = gradcheck_fixture();
        let items = fx.items();
        let (l1, g1) = backward(&params, &cfg, &items, None).unwrap();
        let l2 = loss(&params, &cfg, &items).unwrap();
        assert_eq!(l1, l2, "backward must report exactly the loss() value");
        let (_, g2) = backward(&params, &cfg, &items, None).unwrap();
        assert_eq!(g1, g2);

        let mut cfg_drop = cfg;
        cfg_drop.dropout = 0.2;
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let (la, ga) = backward(&params, &cfg_drop, &items, Some(&mut rng_a)).unwrap();
        let (lb, gb) = backward(&params, &cfg_drop, &items, Some(&mut rng_b)).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
    }

    #[test]
    fn analytic_gradients_match_central_finite_differences() {
        let cfg = tiny_cfg();
        let params = init(&cfg).unwrap();
        let fx = gradcheck_fixture();
        let items = fx.items();
        let (_, grads) = backward(&params, &cfg, &items, None).unwrap();

        let eps = 1e-3;
        let mut n_checked = 0usize;
        let mut n_loose = 0usize;
        let mut worst = 0.0f64;
        let grad_arrays: Vec<(String, Vec<f64>)> = grads
            .named_arrays()
            .into_iter()
            .map(|(n, a)| (n, a.clone()))
            .collect();
        let mut perturbed = params.clone();
        for (ai, (name, garr)) in grad_arrays.iter().enumerate() {
            for i in 0..garr.len() {
                let base = {
                    let arrs = perturbed.named_arrays();
                    arrs[ai].1[i]
                };
                {
                    let mut arrs = perturbed.named_arrays_mut();
                    *arrs[ai].1.get_mut(i).unwrap() = base + eps;
                }
                let up = loss(&perturbed, &cfg, &items).unwrap();
                {
                    let mut arrs = perturbed.named_arrays_mut();
                    *arrs[ai].1.get_mut(i).unwrap() = base - eps;
                }
                let down = loss(&perturbed, &cfg, &items).unwrap();
                {
                    let mut arrs = perturbed.named_arrays_mut();
                    *arrs[ai].1.get_mut(i).unwrap() = base;
                }
                let fd = (up - down) / (2.0 * eps);
                let analytic = garr[i];
                let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
                worst = worst.max(rel);
                n_checked += 1;
                if rel >= 1e-4 {
                    n_loose += 1;
                    assert!(rel < 1e-3, "{name}[{i}]: analytic={analytic} fd={fd} rel={rel}");
                }
            }
        }
        assert!(n_checked > 1500, "expected to sweep every parameter, got {n_checked}");
        assert!(
            (n_loose as f64) < 0.01 * n_checked as f64,
            "{n_loose}/{n_checked} parameters exceeded 1e-4 relative error (worst {worst})"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.iolab");
        let model = Model::init(tiny_cfg()).unwrap();
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.cfg, model.cfg);
        assert_eq!(back.params, model.params);
        let a = model.forward(&[5, 6, 7], &[8]).unwrap();
        let b = back.forward(&[5, 6, 7], &[8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.iolab");
        let model = Model::init(tiny_cfg()).unwrap();
        model.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(ModelError::BadCheckpoint(_))));

        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Model::load(&path), Err(ModelError::BadCheckpoint(_))));
    }
}
