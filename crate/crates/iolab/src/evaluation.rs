//! Quality and order-fidelity metrics: corpus and sentence BLEU, exact
//! match, length-binned reports, and order adherence.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::canvas::{apply, align, valid_actions, AlignSide, Canvas, InsertionAction};
use crate::corpus::{ParallelExample, TokenId, EOS};
use crate::decoder::{decode, DecodeConfig, DecodeMode, DecodeTrace, SlotPredictor};
use crate::model::ModelError;
use crate::orders::{OrderError, OrderSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    EmptySet,
    #[error("count mismatch: {hyps} hypotheses vs {refs} references")]
    CountMismatch { hyps: usize, refs: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Canvas(#[from] crate::canvas::CanvasError),
}

fn check_counts(hyps: usize, refs: usize) -> Result<(), EvalError> {
    if hyps != refs {
        return Err(EvalError::CountMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(EvalError::EmptySet);
    }
    Ok(())
}

/// Corpus-level BLEU plus the per-sentence smoothed scores, all on a 0..100
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub sentence: Vec<f64>,
}

impl BleuReport {
    /// Key-value text block, one field per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bleu: {:.4}", self.bleu);
        for (i, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(out, "precision{}: {:.4}", i + 1, p);
        }
        let _ = writeln!(out, "brevity_penalty: {:.4}", self.brevity_penalty);
        let _ = writeln!(out, "hyp_len: {}", self.hyp_len);
        let _ = writeln!(out, "ref_len: {}", self.ref_len);
        out
    }

    /// Single-line machine-readable record with a fixed field order.
    pub fn render_line(&self) -> String {
        format!(
            "bleu={:.4} p1={:.4} p2={:.4} p3={:.4} p4={:.4} bp={:.4} hyp_len={} ref_len={}",
            self.bleu,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len,
        )
    }
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the number of hypothesis n-grams.
fn clipped_matches(hyp: &[TokenId], rf: &[TokenId], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let possible = hyp.len() + 1 - n;
    let ref_counts = ngram_counts(rf, n);
    let mut matches = 0;
    for (g, c) in ngram_counts(hyp, n) {
        matches += c.min(ref_counts.get(g).copied().unwrap_or(0));
    }
    (matches, possible)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

/// Standard 4-gram corpus BLEU: clipped modified precisions, geometric mean,
/// brevity penalty `exp(1 - r/c)` for `c < r`. Unsmoothed: any zero precision
/// gives corpus BLEU 0. Also fills in the smoothed per-sentence scores.
pub fn corpus_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<BleuReport, EvalError> {
    check_counts(hyps.len(), refs.len())?;
    let mut matches = [0usize; 4];
    let mut possible = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for (n, (m, p)) in matches.iter_mut().zip(possible.iter_mut()).enumerate() {
            let (dm, dp) = clipped_matches(h, r, n + 1);
            *m += dm;
            *p += dp;
        }
    }
    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        if possible[n] > 0 {
            precisions[n] = matches[n] as f64 / possible[n] as f64;
        }
    }
    let bp = brevity_penalty(hyp_len, ref_len);
    let bleu = if precisions.iter().all(|&p| p > 0.0) {
        100.0 * bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    } else {
        0.0
    };
    let sentence = hyps.iter().zip(refs).map(|(h, r)| sentence_bleu(h, r)).collect();
    Ok(BleuReport { bleu, precisions, brevity_penalty: bp, hyp_len, ref_len, sentence })
}

/// Smoothed sentence BLEU on 0..100. Orders longer than the hypothesis are
/// dropped; an order with zero matches falls back to `1 / (2^k * possible)`
/// where `k` counts the zero-match orders so far. An identical pair scores
/// exactly 100, an empty hypothesis 0.
pub fn sentence_bleu(hyp: &[TokenId], rf: &[TokenId]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let mut smooth = 1.0f64;
    let mut log_sum = 0.0f64;
    let mut orders = 0usize;
    for n in 1..=4 {
        let (m, p) = clipped_matches(hyp, rf, n);
        if p == 0 {
            continue;
        }
        orders += 1;
        let prec = if m > 0 {
            m as f64 / p as f64
        } else {
            smooth *= 2.0;
            1.0 / (smooth * p as f64)
        };
        log_sum += prec.ln();
    }
    if orders == 0 {
        return 0.0;
    }
    100.0 * brevity_penalty(hyp.len(), rf.len()) * (log_sum / orders as f64).exp()
}

/// Percentage of hypotheses equal to their reference.
pub fn exact_match(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<f64, EvalError> {
    check_counts(hyps.len(), refs.len())?;
    let hits = hyps.iter().zip(refs).filter(|(h, r)| h == r).count();
    Ok(100.0 * hits as f64 / hyps.len() as f64)
}

pub const LENGTH_BIN_WIDTH: usize = 5;
pub const LENGTH_BIN_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthBin {
    /// Inclusive source-length range.
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    /// Mean smoothed sentence BLEU; 0 when the bin is empty.
    pub mean_bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBinReport {
    pub bins: [LengthBin; LENGTH_BIN_COUNT],
}

impl LengthBinReport {
    /// One line per bin: `bin <lo>-<hi> count=<n> mean_bleu=<v>`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for b in &self.bins {
            let _ = writeln!(out, "bin {}-{} count={} mean_bleu={:.4}", b.lo, b.hi, b.count, b.mean_bleu);
        }
        out
    }
}

/// Mean sentence BLEU binned by source length into [1,5], [6,10], ...,
/// [46,50]. Sources longer than 50 tokens (or empty) are excluded.
pub fn length_binned_bleu(
    hyps: &[Vec<TokenId>],
    refs: &[Vec<TokenId>],
    sources: &[Vec<TokenId>],
) -> Result<LengthBinReport, EvalError> {
    check_counts(hyps.len(), refs.len())?;
    check_counts(hyps.len(), sources.len())?;
    let mut sums = [0.0f64; LENGTH_BIN_COUNT];
    let mut counts = [0usize; LENGTH_BIN_COUNT];
    for ((h, r), s) in hyps.iter().zip(refs).zip(sources) {
        let len = s.len();
        if len == 0 || len > LENGTH_BIN_WIDTH * LENGTH_BIN_COUNT {
            continue;
        }
        let bin = (len - 1) / LENGTH_BIN_WIDTH;
        sums[bin] += sentence_bleu(h, r);
        counts[bin] += 1;
    }
    let bins = std::array::from_fn(|i| LengthBin {
        lo: i * LENGTH_BIN_WIDTH + 1,
        hi: (i + 1) * LENGTH_BIN_WIDTH,
        count: counts[i],
        mean_bleu: if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 },
    });
    Ok(LengthBinReport { bins })
}

/// Count of decode-time insertions that landed in the order's argmin set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdherenceReport {
    pub total: usize,
    pub adherent: usize,
}

impl AdherenceReport {
    /// 100 by convention when no insertions happened.
    pub fn percentage(&self) -> f64 {
        if self.total == 0 {
            100.0
        } else {
            100.0 * self.adherent as f64 / self.total as f64
        }
    }

    pub fn render_line(&self) -> String {
        format!("adherent={} total={} pct={:.2}", self.adherent, self.total, self.percentage())
    }

    pub fn absorb(&mut self, other: AdherenceReport) {
        self.total += other.total;
        self.adherent += other.adherent;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdherenceMode {
    /// Serial greedy decode; each insertion is checked against the order's
    /// best insertion actions for the reference-aligned canvas, and counts
    /// non-adherent once the hypothesis diverges from the reference.
    Free,
    /// The decode is restricted to valid actions (the model argmax over
    /// them), so the reference is always completed and every step checks.
    Forced,
}

impl std::str::FromStr for AdherenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free" => Ok(AdherenceMode::Free),
            "forced" => Ok(AdherenceMode::Forced),
            other => Err(format!("unknown adherence mode {other:?} (expected free or forced)")),
        }
    }
}

/// Fraction of insertions following the target order across an evaluation
/// set. Deterministic given (predictor, order, examples). Adaptive orders
/// score each step against the model posterior for that canvas.
pub fn adherence<P: SlotPredictor + ?Sized>(
    predictor: &P,
    order: &OrderSpec,
    examples: &[ParallelExample],
    mode: AdherenceMode,
    eos_penalty: f64,
) -> Result<AdherenceReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut report = AdherenceReport::default();
    for ex in examples {
        let part = match mode {
            AdherenceMode::Free => adherence_free(predictor, order, ex, eos_penalty)?,
            AdherenceMode::Forced => adherence_forced(predictor, order, ex)?,
        };
        report.absorb(part);
    }
    Ok(report)
}

fn in_best_set(best: &[InsertionAction], content: TokenId, location: usize) -> bool {
    best.iter().any(|b| b.content == content && b.location == location)
}

fn adherence_free<P: SlotPredictor + ?Sized>(
    predictor: &P,
    order: &OrderSpec,
    ex: &ParallelExample,
    eos_penalty: f64,
) -> Result<AdherenceReport, EvalError> {
    let cfg = DecodeConfig::for_source(DecodeMode::Serial, eos_penalty, ex.source.len());
    let trace = decode(predictor, &ex.source, &cfg)?;
    trace_adherence(predictor, order, ex, &trace)
}

/// Judges an existing serial decode trace against the order, so callers that
/// already decoded (for BLEU, say) do not pay for a second pass. The
/// predictor is only consulted for adaptive orders.
pub fn trace_adherence<P: SlotPredictor + ?Sized>(
    predictor: &P,
    order: &OrderSpec,
    ex: &ParallelExample,
    trace: &DecodeTrace,
) -> Result<AdherenceReport, EvalError> {
    let mut report = AdherenceReport::default();
    let mut prev: &[TokenId] = &[];
    for step in &trace.steps {
        let Some(action) = step.insertions.first() else {
            break;
        };
        report.total += 1;
        if let Some(kept) = align(prev, &ex.target, AlignSide::Left) {
            let canvas = Canvas::from_kept(ex.target.clone(), &kept);
            let aset = valid_actions(&canvas)?;
            let posterior;
            let posterior_ref = if order.kind.is_adaptive() {
                posterior = predictor.predict(&ex.source, prev)?;
                Some(&posterior)
            } else {
                None
            };
            let best = order.best_insertions(&aset, posterior_ref)?;
            if in_best_set(&best, action.content, action.location) {
                report.adherent += 1;
            }
        }
        prev = &step.hypothesis;
    }
    Ok(report)
}

fn adherence_forced<P: SlotPredictor + ?Sized>(
    predictor: &P,
    order: &OrderSpec,
    ex: &ParallelExample,
) -> Result<AdherenceReport, EvalError> {
    let mut canvas = Canvas::from_kept(ex.target.clone(), &[]);
    let mut report = AdherenceReport::default();
    while !canvas.is_complete() {
        let aset = valid_actions(&canvas)?;
        let dists = predictor.predict(&ex.source, canvas.hypothesis())?;
        // Model argmax over the deduplicated non-EOS valid actions; the first
        // occurrence (leftmost target position) represents each pair.
        let mut chosen: Option<(f64, InsertionAction)> = None;
        let mut seen: Vec<(TokenId, usize)> = Vec::new();
        for a in aset.iter() {
            if a.content == EOS || seen.contains(&(a.content, a.location)) {
                continue;
            }
            seen.push((a.content, a.location));
            let s = dists.joint_logp(a.content, a.location);
            if chosen.is_none_or(|(best, _)| s > best) {
                chosen = Some((s, *a));
            }
        }
        let (_, action) = chosen.expect("an incomplete canvas always has a non-EOS action");
        let posterior_ref = if order.kind.is_adaptive() { Some(&dists) } else { None };
        let best = order.best_insertions(&aset, posterior_ref)?;
        report.total += 1;
        if in_best_set(&best, action.content, action.location) {
            report.adherent += 1;
        }
        canvas = apply(&canvas, &[action])?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Vocabulary, NUM_SPECIALS};
    use crate::model::SlotDistributions;
    use crate::orders::OrderKind;
    use proptest::prelude::*;

    const W: TokenId = NUM_SPECIALS;

    #[test]
    fn identical_corpus_scores_exactly_one_hundred() {
        let sents = vec![vec![W, W + 1, W + 2, W + 3], vec![W + 2, W + 1]];
        let report = corpus_bleu(&sents, &sents).unwrap();
        assert_eq!(report.bleu, 100.0);
        assert_eq!(report.brevity_penalty, 1.0);
        assert_eq!(report.precisions, [1.0; 4]);
        for s in report.sentence {
            assert_eq!(s, 100.0);
        }
    }

    #[test]
    fn short_hypothesis_components_match_hand_computation() {
        // hyp "the cat" vs ref "the cat sat": p1 = p2 = 1, BP = exp(1 - 3/2).
        let report = corpus_bleu(&[vec![W, W + 1]], &[vec![W, W + 1, W + 2]]).unwrap();
        assert_eq!(report.precisions[0], 1.0);
        assert_eq!(report.precisions[1], 1.0);
        assert_eq!(report.precisions[2], 0.0, "no trigram fits a 2-token hypothesis");
        assert!((report.brevity_penalty - 0.6065).abs() < 1e-4);
        assert_eq!(report.bleu, 0.0, "4-gram corpus BLEU is unsmoothed");
        let two_gram = 100.0 * report.brevity_penalty;
        assert!((two_gram - 60.65).abs() < 0.01);
    }

    #[test]
    fn disjoint_vocabulary_scores_zero_corpus_but_positive_sentence() {
        let hyp = vec![vec![W, W + 1, W + 2]];
        let rf = vec![vec![W + 3, W + 4, W + 5]];
        let report = corpus_bleu(&hyp, &rf).unwrap();
        assert_eq!(report.bleu, 0.0);
        assert!(report.sentence[0] > 0.0 && report.sentence[0] < 100.0);
    }

    #[test]
    fn clipping_limits_repeated_unigrams() {
        // hyp "the the the the" vs ref "the cat": one clipped match of 4.
        let report = corpus_bleu(&[vec![W; 4]], &[vec![W, W + 1]]).unwrap();
        assert_eq!(report.precisions[0], 0.25);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(corpus_bleu(&[], &[]), Err(EvalError::EmptySet)));
        assert!(matches!(
            corpus_bleu(&[vec![W]], &[]),
            Err(EvalError::CountMismatch { hyps: 1, refs: 0 })
        ));
        assert_eq!(sentence_bleu(&[], &[W]), 0.0);
    }

    #[test]
    fn corpus_bleu_is_permutation_invariant() {
        let hyps = vec![vec![W, W + 1], vec![W + 2, W + 3, W + 4], vec![W + 1]];
        let refs = vec![vec![W, W + 1, W + 2], vec![W + 2, W + 3], vec![W + 1, W]];
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let perm = [2, 0, 1];
        let hp: Vec<_> = perm.iter().map(|&i| hyps[i].clone()).collect();
        let rp: Vec<_> = perm.iter().map(|&i| refs[i].clone()).collect();
        let b = corpus_bleu(&hp, &rp).unwrap();
        assert_eq!(a.bleu, b.bleu);
        assert_eq!(a.precisions, b.precisions);
    }

    proptest! {
        #[test]
        fn sentence_bleu_stays_in_range(
            hyp in proptest::collection::vec(W..W + 6, 0..12),
            rf in proptest::collection::vec(W..W + 6, 1..12),
        ) {
            let s = sentence_bleu(&hyp, &rf);
            prop_assert!((0.0..=100.0).contains(&s));
            let full = sentence_bleu(&rf, &rf);
            prop_assert_eq!(full, 100.0);
        }
    }

    #[test]
    fn exact_match_counts_equal_pairs() {
        let hyps = vec![vec![W], vec![W, W + 1], vec![W + 2]];
        let refs = vec![vec![W], vec![W + 1, W], vec![W + 2]];
        let pct = exact_match(&hyps, &refs).unwrap();
        assert!((pct - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn length_bins_partition_sources_up_to_fifty() {
        let hyps = vec![vec![W], vec![W, W + 1], vec![W; 3]];
        let refs = hyps.clone();
        let sources = vec![vec![W; 3], vec![W; 8], vec![W; 51]];
        let report = length_binned_bleu(&hyps, &refs, &sources).unwrap();
        assert_eq!(report.bins[0].count, 1);
        assert_eq!(report.bins[0].mean_bleu, 100.0);
        assert_eq!(report.bins[1].count, 1);
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 2, "length 51 is excluded");
        assert_eq!(report.bins[0].lo, 1);
        assert_eq!(report.bins[0].hi, 5);
        assert_eq!(report.bins[9].lo, 46);
        assert_eq!(report.bins[9].hi, 50);
    }

    #[test]
    fn binned_means_match_hand_averaging() {
        let hyps = vec![vec![W, W + 1, W + 2], vec![W, W + 3, W + 2]];
        let refs = vec![vec![W, W + 1, W + 2], vec![W, W + 1, W + 2]];
        let sources = vec![vec![W; 4], vec![W; 4]];
        let report = length_binned_bleu(&hyps, &refs, &sources).unwrap();
        let expect = (sentence_bleu(&hyps[0], &refs[0]) + sentence_bleu(&hyps[1], &refs[1])) / 2.0;
        assert_eq!(report.bins[0].count, 2);
        assert!((report.bins[0].mean_bleu - expect).abs() < 1e-12);
    }

    /// Scripted predictor that walks a fixed token sequence left to right,
    /// then emits EOS.
    struct ScriptedL2r {
        target: Vec<TokenId>,
        vocab_size: usize,
    }

    impl SlotPredictor for ScriptedL2r {
        fn predict(&self, _s: &[TokenId], hyp: &[TokenId]) -> Result<SlotDistributions, ModelError> {
            let n_slots = hyp.len() + 1;
            let v = self.vocab_size;
            let mut content = vec![-40.0; n_slots * v];
            let mut location = vec![-40.0; n_slots];
            if hyp.len() < self.target.len() {
                // Insert the next target token at the right edge.
                let l = n_slots - 1;
                content[l * v + self.target[hyp.len()]] = 0.0;
                location[l] = 0.0;
            } else {
                for l in 0..n_slots {
                    content[l * v + EOS] = 0.0;
                }
                location[0] = 0.0;
            }
            Ok(SlotDistributions::from_logits(content, location, v))
        }
    }

    fn vocab_of(n: usize) -> Vocabulary {
        Vocabulary::from_parts((0..n).map(|i| (format!("w{i:02}"), (n - i) as u64)).collect())
    }

    #[test]
    fn scripted_l2r_decode_is_fully_adherent_under_l2r() {
        let vocab = vocab_of(6);
        let target = vec![W, W + 2, W + 1, W + 4];
        let p = ScriptedL2r { target: target.clone(), vocab_size: vocab.size() };
        let examples = vec![ParallelExample { source: vec![W], target: target.clone() }];
        let order = OrderSpec::new(OrderKind::L2r, &vocab);
        let free = adherence(&p, &order, &examples, AdherenceMode::Free, 0.0).unwrap();
        assert_eq!((free.adherent, free.total), (4, 4));
        assert_eq!(free.percentage(), 100.0);
        // The same decode violates r2l at every step but the last insertion.
        let order = OrderSpec::new(OrderKind::R2l, &vocab);
        let r2l = adherence(&p, &order, &examples, AdherenceMode::Free, 0.0).unwrap();
        assert_eq!(r2l.total, 4);
        assert_eq!(r2l.adherent, 1);
    }

    #[test]
    fn uniform_order_is_always_adhered_to_while_on_reference() {
        let vocab = vocab_of(6);
        let target = vec![W + 1, W + 3, W];
        let p = ScriptedL2r { target: target.clone(), vocab_size: vocab.size() };
        let examples = vec![ParallelExample { source: vec![W], target }];
        let order = OrderSpec::new(OrderKind::Uniform, &vocab);
        let rep = adherence(&p, &order, &examples, AdherenceMode::Free, 0.0).unwrap();
        assert_eq!(rep.percentage(), 100.0);
    }

    /// Inserts a token that never appears in any reference.
    struct OffReference {
        vocab_size: usize,
    }

    impl SlotPredictor for OffReference {
        fn predict(&self, _s: &[TokenId], hyp: &[TokenId]) -> Result<SlotDistributions, ModelError> {
            let n_slots = hyp.len() + 1;
            let v = self.vocab_size;
            let mut content = vec![-40.0; n_slots * v];
            for l in 0..n_slots {
                content[l * v + if hyp.len() < 2 { v - 1 } else { EOS }] = 0.0;
            }
            Ok(SlotDistributions::from_logits(content, vec![0.0; n_slots], v))
        }
    }

    #[test]
    fn off_reference_insertions_score_zero_adherence() {
        let vocab = vocab_of(6);
        let examples = vec![ParallelExample { source: vec![W], target: vec![W, W + 1] }];
        let p = OffReference { vocab_size: vocab.size() };
        let order = OrderSpec::new(OrderKind::Uniform, &vocab);
        let rep = adherence(&p, &order, &examples, AdherenceMode::Free, 0.0).unwrap();
        assert_eq!(rep.adherent, 0);
        assert_eq!(rep.total, 2);
    }

    #[test]
    fn forced_mode_completes_the_reference_and_checks_every_insertion() {
        let vocab = vocab_of(6);
        let target = vec![W, W + 2, W + 1, W + 4];
        let p = ScriptedL2r { target: target.clone(), vocab_size: vocab.size() };
        let examples = vec![ParallelExample { source: vec![W], target: target.clone() }];
        let order = OrderSpec::new(OrderKind::L2r, &vocab);
        let rep = adherence(&p, &order, &examples, AdherenceMode::Forced, 0.0).unwrap();
        assert_eq!(rep.total, target.len());
        assert_eq!(rep.adherent, target.len());
    }

    #[test]
    fn adherence_is_deterministic() {
        let vocab = vocab_of(6);
        let target = vec![W + 1, W, W + 3];
        let p = ScriptedL2r { target: target.clone(), vocab_size: vocab.size() };
        let examples = vec![ParallelExample { source: vec![W, W + 1], target }];
        let order = OrderSpec::new(OrderKind::BinaryTree, &vocab);
        let a = adherence(&p, &order, &examples, AdherenceMode::Free, 0.5).unwrap();
        let b = adherence(&p, &order, &examples, AdherenceMode::Free, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
