//! Greedy insertion decoding.
//!
//! Serial mode applies one insertion per step, the argmax of the joint
//! log-probability `log p(c | l) + log p(l)`. Parallel mode applies every
//! slot's content argmax at once. In both modes an `eos_penalty` gamma is
//! subtracted from the end-of-slot log-probability before the argmax, so
//! larger gamma defers termination and favours longer outputs. Decoding ends
//! at the first step that inserts nothing; that step stays in the trace with
//! `k = 0`.

use std::fmt;
use std::str::FromStr;

use crate::canvas::{apply, Canvas, InsertionAction};
use crate::corpus::{TokenId, Vocabulary, END, EOS, PAD, START};
use crate::model::{Model, ModelError, SlotDistributions};

/// Anything that maps a (source, hypothesis) pair to per-slot distributions.
/// The trained [`Model`] is the usual implementation; evaluation code also
/// uses scripted predictors.
pub trait SlotPredictor {
    fn predict(&self, source: &[TokenId], hypothesis: &[TokenId]) -> Result<SlotDistributions, ModelError>;

    /// Longest hypothesis this predictor can score, when bounded. [`decode`]
    /// clamps its length budget to this so a runaway generation stops instead
    /// of overrunning the predictor.
    fn max_hypothesis_len(&self) -> Option<usize> {
        None
    }
}

impl SlotPredictor for Model {
    fn predict(&self, source: &[TokenId], hypothesis: &[TokenId]) -> Result<SlotDistributions, ModelError> {
        self.forward(source, hypothesis)
    }

    fn max_hypothesis_len(&self) -> Option<usize> {
        Some(self.cfg.max_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeMode {
    Serial,
    Parallel,
}

impl DecodeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecodeMode::Serial => "serial",
            DecodeMode::Parallel => "parallel",
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "serial" => Ok(DecodeMode::Serial),
            "parallel" => Ok(DecodeMode::Parallel),
            other => Err(format!("unknown decode mode {other:?} (expected serial or parallel)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Gamma subtracted from the end-of-slot log-probability.
    pub eos_penalty: f64,
    pub max_steps: usize,
    pub max_len: usize,
}

fn ceil_log2(x: usize) -> usize {
    if x <= 1 {
        0
    } else {
        (usize::BITS - (x - 1).leading_zeros()) as usize
    }
}

impl DecodeConfig {
    /// Budgets scaled to one source: `max_len = 2 * src_len + 16`, and enough
    /// steps to reach it in the given mode (serial inserts one token per
    /// step, parallel can roughly double the hypothesis per step).
    pub fn for_source(mode: DecodeMode, eos_penalty: f64, src_len: usize) -> DecodeConfig {
        let max_len = 2 * src_len + 16;
        let max_steps = match mode {
            DecodeMode::Serial => max_len + 8,
            DecodeMode::Parallel => ceil_log2(max_len) + 8,
        };
        DecodeConfig { mode, eos_penalty, max_steps, max_len }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    /// A step inserted nothing: every chosen action was end-of-slot.
    Finished,
    /// The step budget ran out first.
    MaxSteps,
    /// The hypothesis reached the length cap first.
    MaxLen,
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    /// Non-EOS insertions applied this step, ascending by location.
    pub insertions: Vec<InsertionAction>,
    /// Hypothesis after applying them.
    pub hypothesis: Vec<TokenId>,
    /// Indices into `hypothesis` that this step inserted.
    pub new_positions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
    pub status: DecodeStatus,
}

impl DecodeTrace {
    pub fn hypothesis(&self) -> &[TokenId] {
        self.steps.last().map_or(&[], |s| &s.hypothesis)
    }
}

fn is_masked(token: TokenId) -> bool {
    token == PAD || token == START || token == END
}

fn penalized(logp: f64, token: TokenId, gamma: f64) -> f64 {
    if token == EOS {
        logp - gamma
    } else {
        logp
    }
}

/// Chosen insertions for one step: serial keeps only the joint argmax (empty
/// if that is an EOS action), parallel keeps each slot's content argmax.
/// Ties break toward the lower slot, then the lower token id.
fn choose_actions(dists: &SlotDistributions, mode: DecodeMode, gamma: f64) -> Vec<InsertionAction> {
    match mode {
        DecodeMode::Serial => {
            let mut best: Option<(f64, usize, TokenId)> = None;
            for l in 0..dists.n_slots() {
                let loc_lp = dists.location_logp(l);
                for (c, &clp) in dists.content_logp(l).iter().enumerate() {
                    if is_masked(c) {
                        continue;
                    }
                    let score = penalized(clp, c, gamma) + loc_lp;
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, l, c));
                    }
                }
            }
            match best {
                Some((_, l, c)) if c != EOS => {
                    vec![InsertionAction { content: c, location: l, target_pos: None }]
                }
                _ => Vec::new(),
            }
        }
        DecodeMode::Parallel => {
            let mut actions = Vec::new();
            for l in 0..dists.n_slots() {
                let mut best: Option<(f64, TokenId)> = None;
                for (c, &clp) in dists.content_logp(l).iter().enumerate() {
                    if is_masked(c) {
                        continue;
                    }
                    let score = penalized(clp, c, gamma);
                    if best.is_none_or(|(s, _)| score > s) {
                        best = Some((score, c));
                    }
                }
                if let Some((_, c)) = best {
                    if c != EOS {
                        actions.push(InsertionAction { content: c, location: l, target_pos: None });
                    }
                }
            }
            actions
        }
    }
}

/// Decodes a hypothesis for `source`, recording every step. The trace always
/// holds the decisions actually taken, so adherence evaluation can replay it.
pub fn decode<P: SlotPredictor + ?Sized>(
    predictor: &P,
    source: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<DecodeTrace, ModelError> {
    let max_len = match predictor.max_hypothesis_len() {
        Some(cap) => cfg.max_len.min(cap),
        None => cfg.max_len,
    };
    let mut hyp: Vec<TokenId> = Vec::new();
    let mut steps = Vec::new();
    let mut status = DecodeStatus::MaxSteps;
    for _ in 0..cfg.max_steps {
        let dists = predictor.predict(source, &hyp)?;
        let actions = choose_actions(&dists, cfg.mode, cfg.eos_penalty);
        let after = apply(&Canvas::bare(hyp.clone()), &actions)
            .expect("chosen actions are valid for the canvas");
        let new_positions: Vec<usize> =
            actions.iter().enumerate().map(|(i, a)| a.location + i).collect();
        hyp = after.hypothesis().to_vec();
        let inserted = actions.len();
        steps.push(TraceStep { insertions: actions, hypothesis: hyp.clone(), new_positions });
        if inserted == 0 {
            status = DecodeStatus::Finished;
            break;
        }
        if hyp.len() >= max_len {
            status = DecodeStatus::MaxLen;
            break;
        }
    }
    Ok(DecodeTrace { steps, status })
}

/// One line per step: `step<TAB>k=<insertions><TAB>hypothesis`, with tokens
/// inserted that step in brackets.
pub fn render_trace(trace: &DecodeTrace, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let words: Vec<String> = step
            .hypothesis
            .iter()
            .enumerate()
            .map(|(p, &t)| {
                let w = vocab.token_str(t);
                if step.new_positions.contains(&p) {
                    format!("[{w}]")
                } else {
                    w.to_string()
                }
            })
            .collect();
        out.push_str(&format!("{i}\tk={}\t{}\n", step.insertions.len(), words.join(" ")));
    }
    out
}
