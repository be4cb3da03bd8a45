//! Training loop, evaluation harness, and the temperature/EOS-penalty sweep.
//!
//! Everything here is deterministic given the seeds: batches are sampled from
//! one `ChaCha8Rng` stream, updates are single-threaded, and reports use
//! fixed-precision formatting, so a repeated run produces byte-identical
//! metrics, checkpoints, and sweep tables.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::canvas::{rollin_sample, valid_actions, Canvas, CanvasError};
use crate::corpus::{ParallelExample, Vocabulary};
use crate::decoder::{decode, DecodeConfig, DecodeMode};
use crate::evaluation::{
    corpus_bleu, exact_match, trace_adherence, AdherenceReport, EvalError,
};
use crate::model::{
    backward, forward, init, Gradients, Model, ModelConfig, ModelError, Parameters, TrainItem,
};
use crate::oracle::{build_policy, OracleError, OraclePolicy};
use crate::orders::{OrderError, OrderKind, OrderSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("missing checkpoint for tau={tau}: {}: {source}", path.display())]
    MissingCheckpoint { tau: f64, path: PathBuf, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs for one training run. The checkpoint path, when set, receives the
/// final parameters (or the last good ones if training diverges).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub order: OrderKind,
    pub tau: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Peak learning rate of the warmup + inverse-square-root schedule.
    pub lr: f64,
    pub warmup: usize,
    pub seed: u64,
    pub eval_interval: usize,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Desk-scale defaults: 20k steps, batch 32, peak 3e-3, warmup 1k.
    pub fn desk_defaults(order: OrderKind, vocab_size: usize) -> TrainConfig {
        TrainConfig {
            order,
            tau: 1.0,
            batch_size: 32,
            steps: 20_000,
            lr: 3e-3,
            warmup: 1_000,
            seed: 0,
            eval_interval: 1_000,
            checkpoint: None,
            model: ModelConfig::with_vocab(vocab_size),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        let bad = |m: String| Err(HarnessError::BadConfig(m));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau {} must be finite and positive", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be finite and positive", self.lr));
        }
        if self.steps > 0 {
            if self.warmup == 0 || self.warmup > self.steps {
                return bad(format!(
                    "warmup {} must lie in 1..=steps ({})",
                    self.warmup, self.steps
                ));
            }
        }
        Ok(())
    }
}

/// Learning rate at a 1-based step: `peak * min(step/warmup, sqrt(warmup/step))`.
pub fn lr_at(peak: f64, warmup: usize, step: usize) -> f64 {
    let s = step as f64;
    let w = warmup.max(1) as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Adaptive-moment optimizer with the transformer-standard betas. Parameters
/// are re-rounded to f32 values after every update, keeping checkpoints
/// lossless.
pub struct Adam {
    m: Parameters,
    v: Parameters,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(cfg: &ModelConfig) -> Adam {
        Adam {
            m: Parameters::zeros(cfg),
            v: Parameters::zeros(cfg),
            t: 0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let g_arrays = grads.named_arrays();
        let m_arrays = self.m.named_arrays_mut();
        let v_arrays = self.v.named_arrays_mut();
        let p_arrays = params.named_arrays_mut();
        for (((mp, gp), mm), mv) in p_arrays.into_iter().zip(g_arrays).zip(m_arrays).zip(v_arrays) {
            debug_assert!(mp.0 == gp.0 && mp.0 == mm.0 && mp.0 == mv.0);
            let (p, g, m, v) = (mp.1, gp.1, mm.1, mv.1);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
        params.round_to_f32();
    }
}

/// One rolled-in training example with its oracle policy.
pub struct RolledExample {
    pub index: usize,
    pub canvas: Canvas,
    pub policy: OraclePolicy,
}

/// Samples a batch: example indices uniformly with replacement, then a
/// uniform roll-in of each target, then the oracle policy at `tau`. Adaptive
/// orders consult the current parameters through an evaluation-mode forward
/// pass; the resulting policy is a constant target (no gradient flows into
/// it).
pub fn sample_batch(
    data: &[ParallelExample],
    batch_size: usize,
    order: &OrderSpec,
    params: &Parameters,
    model_cfg: &ModelConfig,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RolledExample>, HarnessError> {
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let index = rng.gen_range(0..data.len());
        let canvas = rollin_sample(&data[index].target, rng);
        let aset = valid_actions(&canvas)?;
        let posterior;
        let posterior_ref = if order.kind.is_adaptive() {
            posterior = forward(params, model_cfg, &data[index].source, canvas.hypothesis())?;
            Some(&posterior)
        } else {
            None
        };
        let policy = build_policy(order, &aset, tau, posterior_ref)?;
        batch.push(RolledExample { index, canvas, policy });
    }
    Ok(batch)
}

fn batch_items<'a>(data: &'a [ParallelExample], batch: &'a [RolledExample]) -> Vec<TrainItem<'a>> {
    batch
        .iter()
        .map(|r| TrainItem {
            source: &data[r.index].source,
            hypothesis: r.canvas.hypothesis(),
            policy: &r.policy,
        })
        .collect()
}

/// Incremental training driver; [`train`] wraps it with interval metrics.
pub struct Trainer<'v> {
    pub cfg: TrainConfig,
    order: OrderSpec<'v>,
    params: Parameters,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'v> Trainer<'v> {
    pub fn new(cfg: TrainConfig, vocab: &'v Vocabulary) -> Result<Self, HarnessError> {
        cfg.validate()?;
        if vocab.size() != cfg.model.vocab_size {
            return Err(HarnessError::BadConfig(format!(
                "vocabulary size {} does not match model vocab_size {}",
                vocab.size(),
                cfg.model.vocab_size
            )));
        }
        let params = init(&cfg.model)?;
        let adam = Adam::new(&cfg.model);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let order = OrderSpec::new(cfg.order, vocab);
        Ok(Trainer { cfg, order, params, adam, rng, step: 0 })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn model(&self) -> Model {
        Model { cfg: self.cfg.model, params: self.params.clone() }
    }

    /// One batch update; returns the batch loss.
    pub fn step(&mut self, data: &[ParallelExample]) -> Result<f64, HarnessError> {
        let batch = sample_batch(
            data,
            self.cfg.batch_size,
            &self.order,
            &self.params,
            &self.cfg.model,
            self.cfg.tau,
            &mut self.rng,
        )?;
        let items = batch_items(data, &batch);
        let (loss, grads) = backward(&self.params, &self.cfg.model, &items, Some(&mut self.rng))?;
        if !loss.is_finite() {
            return Err(HarnessError::Diverged {
                step: self.step + 1,
                detail: format!("batch loss {loss}"),
            });
        }
        self.step += 1;
        let lr = lr_at(self.cfg.lr, self.cfg.warmup, self.step);
        self.adam.step(&mut self.params, &grads, lr);
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    /// One line per eval interval: `step loss dev_bleu adherence`.
    pub metrics: String,
    pub first_step_loss: f64,
    /// Mean loss over the final interval (0 when steps = 0).
    pub final_loss: f64,
}

fn dev_metrics(
    model: &Model,
    order: &OrderSpec,
    dev: &[ParallelExample],
) -> Result<(f64, f64), HarnessError> {
    if dev.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    let mut adh = AdherenceReport::default();
    for ex in dev {
        let cfg = DecodeConfig::for_source(DecodeMode::Serial, 0.0, ex.source.len());
        let trace = decode(model, &ex.source, &cfg)?;
        adh.absorb(trace_adherence(model, order, ex, &trace)?);
        hyps.push(trace.hypothesis().to_vec());
        refs.push(ex.target.clone());
    }
    let bleu = corpus_bleu(&hyps, &refs)?.bleu;
    Ok((bleu, adh.percentage()))
}

/// Trains for `cfg.steps` updates, logging interval metrics (mean loss plus
/// serial gamma=0 dev BLEU and adherence over at most 32 dev examples).
/// Zero steps returns the initial parameters unchanged. On divergence the
/// current parameters are saved to the checkpoint path before the error is
/// returned.
pub fn train(
    cfg: &TrainConfig,
    train_data: &[ParallelExample],
    dev_data: &[ParallelExample],
    vocab: &Vocabulary,
) -> Result<TrainOutput, HarnessError> {
    train_logged(cfg, train_data, dev_data, vocab, &mut |_| {})
}

/// [`train`] with a sink that receives each metrics line as it is produced.
pub fn train_logged(
    cfg: &TrainConfig,
    train_data: &[ParallelExample],
    dev_data: &[ParallelExample],
    vocab: &Vocabulary,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutput, HarnessError> {
    if train_data.is_empty() {
        return Err(HarnessError::BadConfig("empty training set".into()));
    }
    let too_long = train_data
        .iter()
        .flat_map(|e| [e.source.len(), e.target.len()])
        .any(|l| l > cfg.model.max_len);
    if too_long {
        return Err(HarnessError::BadConfig(format!(
            "training data exceeds model max_len {}",
            cfg.model.max_len
        )));
    }
    let mut trainer = Trainer::new(cfg.clone(), vocab)?;
    let dev_cap = &dev_data[..dev_data.len().min(32)];
    let order = OrderSpec::new(cfg.order, vocab);

    let mut metrics = String::new();
    let mut interval_sum = 0.0;
    let mut interval_count = 0usize;
    let mut first_step_loss = 0.0;
    let mut final_loss = 0.0;
    for step in 1..=cfg.steps {
        let loss = match trainer.step(train_data) {
            Ok(l) => l,
            Err(e) => {
                if let Some(path) = &cfg.checkpoint {
                    trainer.model().save(path)?;
                }
                return Err(e);
            }
        };
        if step == 1 {
            first_step_loss = loss;
        }
        interval_sum += loss;
        interval_count += 1;
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let mean = interval_sum / interval_count as f64;
            let (bleu, adh) = dev_metrics(&trainer.model(), &order, dev_cap)?;
            let line = format!("{step} {mean:.6} {bleu:.2} {adh:.2}");
            log(&line);
            let _ = writeln!(metrics, "{line}");
            final_loss = mean;
            interval_sum = 0.0;
            interval_count = 0;
        }
    }
    let model = trainer.model();
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok(TrainOutput { model, metrics, first_step_loss, final_loss })
}

/// Serial-decode quality of one model against one order at a fixed gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderEval {
    pub gamma: f64,
    pub bleu: f64,
    pub exact_match: f64,
    pub adherence: f64,
}

/// Serial-decodes the whole set at `gamma` and reports corpus BLEU, exact
/// match, and free adherence.
pub fn evaluate_order(
    model: &Model,
    order: &OrderSpec,
    dev: &[ParallelExample],
    gamma: f64,
) -> Result<OrderEval, HarnessError> {
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    let mut adh = AdherenceReport::default();
    for ex in dev {
        let cfg = DecodeConfig::for_source(DecodeMode::Serial, gamma, ex.source.len());
        let trace = decode(model, &ex.source, &cfg)?;
        adh.absorb(trace_adherence(model, order, ex, &trace)?);
        hyps.push(trace.hypothesis().to_vec());
        refs.push(ex.target.clone());
    }
    Ok(OrderEval {
        gamma,
        bleu: corpus_bleu(&hyps, &refs)?.bleu,
        exact_match: exact_match(&hyps, &refs)?,
        adherence: adh.percentage(),
    })
}

/// Evaluates every gamma and keeps the best by exact match, ties broken
/// toward the smaller gamma.
pub fn best_gamma_eval(
    model: &Model,
    order: &OrderSpec,
    dev: &[ParallelExample],
    gammas: &[f64],
) -> Result<OrderEval, HarnessError> {
    if gammas.is_empty() {
        return Err(HarnessError::BadConfig("empty gamma grid".into()));
    }
    let mut best: Option<OrderEval> = None;
    for &gamma in gammas {
        let eval = evaluate_order(model, order, dev, gamma)?;
        if best.is_none_or(|b| eval.exact_match > b.exact_match) {
            best = Some(eval);
        }
    }
    Ok(best.unwrap())
}

/// The standard grids: tau in {0.5, 1, 2}, gamma in {0, 0.5, ..., 8}.
pub fn default_taus() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

pub fn default_gammas() -> Vec<f64> {
    (0..=16).map(|i| i as f64 * 0.5).collect()
}

/// Sweep inputs: one trained checkpoint per tau, the gamma grid, and the
/// decode modes to evaluate.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub entries: Vec<(f64, PathBuf)>,
    pub gammas: Vec<f64>,
    pub modes: Vec<DecodeMode>,
}

impl SweepGrid {
    pub fn new(entries: Vec<(f64, PathBuf)>) -> SweepGrid {
        SweepGrid {
            entries,
            gammas: default_gammas(),
            modes: vec![DecodeMode::Serial, DecodeMode::Parallel],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub tau: f64,
    pub gamma: f64,
    pub mode: DecodeMode,
    pub bleu: f64,
    /// Serial free adherence at this gamma (decode-mode independent).
    pub adherence: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    fn cells_of(&self, mode: DecodeMode) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(move |c| c.mode == mode)
    }

    /// Highest dev BLEU for a mode; ties break toward smaller gamma, then
    /// smaller tau.
    pub fn best(&self, mode: DecodeMode) -> Option<&SweepCell> {
        self.cells_of(mode).fold(None, |best: Option<&SweepCell>, c| match best {
            None => Some(c),
            Some(b) => {
                let better = c.bleu > b.bleu
                    || (c.bleu == b.bleu && (c.gamma < b.gamma || (c.gamma == b.gamma && c.tau < b.tau)));
                if better {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        })
    }

    /// Full cell dump, one per-mode table (no-penalty score and best-penalty
    /// score per tau), and the per-mode best lines; fixed formatting, so
    /// equal-seed runs render byte-identically.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let taus: Vec<f64> = {
            let mut t: Vec<f64> = Vec::new();
            for c in &self.cells {
                if !t.contains(&c.tau) {
                    t.push(c.tau);
                }
            }
            t
        };
        let modes: Vec<DecodeMode> = {
            let mut m = Vec::new();
            for c in &self.cells {
                if !m.contains(&c.mode) {
                    m.push(c.mode);
                }
            }
            m
        };
        let n_gammas = self.cells.len() / taus.len().max(1) / modes.len().max(1);
        let _ = writeln!(out, "sweep taus={} gammas={} modes={}", taus.len(), n_gammas, modes.len());
        for c in &self.cells {
            let _ = writeln!(
                out,
                "cell tau={} gamma={} mode={} bleu={:.4} adherence={:.2}",
                c.tau, c.gamma, c.mode, c.bleu, c.adherence
            );
        }
        for &mode in &modes {
            let _ = writeln!(out, "table mode={mode}");
            for &tau in &taus {
                let row: Vec<&SweepCell> =
                    self.cells_of(mode).filter(|c| c.tau == tau).collect();
                let no_penalty = row
                    .iter()
                    .find(|c| c.gamma == 0.0)
                    .or_else(|| row.first())
                    .map_or(0.0, |c| c.bleu);
                let best = row.iter().fold(None, |b: Option<&&SweepCell>, c| match b {
                    None => Some(c),
                    Some(x) => {
                        if c.bleu > x.bleu || (c.bleu == x.bleu && c.gamma < x.gamma) {
                            Some(c)
                        } else {
                            Some(x)
                        }
                    }
                });
                if let Some(best) = best {
                    let _ = writeln!(
                        out,
                        "tau={tau} no_penalty_bleu={:.4} best_gamma={} best_bleu={:.4}",
                        no_penalty, best.gamma, best.bleu
                    );
                }
            }
        }
        for &mode in &modes {
            if let Some(b) = self.best(mode) {
                let _ = writeln!(
                    out,
                    "best mode={mode} tau={} gamma={} bleu={:.4}",
                    b.tau, b.gamma, b.bleu
                );
            }
        }
        out
    }
}

/// Loads each tau's checkpoint and evaluates every (tau, gamma, mode) cell on
/// the dev set: corpus BLEU of that decode, plus serial free adherence at the
/// same gamma. A missing or unreadable checkpoint fails with its grid point.
pub fn sweep(
    grid: &SweepGrid,
    order_kind: OrderKind,
    vocab: &Vocabulary,
    dev: &[ParallelExample],
) -> Result<SweepResult, HarnessError> {
    if grid.entries.is_empty() || grid.gammas.is_empty() || grid.modes.is_empty() {
        return Err(HarnessError::BadConfig("sweep grid has an empty axis".into()));
    }
    if dev.is_empty() {
        return Err(HarnessError::BadConfig("empty dev set".into()));
    }
    let order = OrderSpec::new(order_kind, vocab);
    let mut cells = Vec::new();
    for (tau, path) in &grid.entries {
        let model = Model::load(path).map_err(|source| HarnessError::MissingCheckpoint {
            tau: *tau,
            path: path.clone(),
            source,
        })?;
        for &gamma in &grid.gammas {
            // Adherence is defined on the serial free decode; the serial
            // mode's own decode pass doubles as its measurement pass.
            let mut adh = AdherenceReport::default();
            let mut bleus: Vec<(DecodeMode, f64)> = Vec::new();
            for &mode in &grid.modes {
                let mut hyps = Vec::with_capacity(dev.len());
                let mut refs = Vec::with_capacity(dev.len());
                for ex in dev {
                    let cfg = DecodeConfig::for_source(mode, gamma, ex.source.len());
                    let trace = decode(&model, &ex.source, &cfg)?;
                    if mode == DecodeMode::Serial {
                        adh.absorb(trace_adherence(&model, &order, ex, &trace)?);
                    }
                    hyps.push(trace.hypothesis().to_vec());
                    refs.push(ex.target.clone());
                }
                bleus.push((mode, corpus_bleu(&hyps, &refs)?.bleu));
            }
            if !grid.modes.contains(&DecodeMode::Serial) {
                for ex in dev {
                    let cfg =
                        DecodeConfig::for_source(DecodeMode::Serial, gamma, ex.source.len());
                    let trace = decode(&model, &ex.source, &cfg)?;
                    adh.absorb(trace_adherence(&model, &order, ex, &trace)?);
                }
            }
            for (mode, bleu) in bleus {
                cells.push(SweepCell {
                    tau: *tau,
                    gamma,
                    mode,
                    bleu,
                    adherence: adh.percentage(),
                });
            }
        }
    }
    Ok(SweepResult { cells })
}
