//! Order functions: scores over insertion actions where lower is better.
//!
//! Static orders depend only on the action and the canvas (position, span, or
//! a property of the content token); the two adaptive orders read the model's
//! own posterior. Rank-based orders share one dense ranking over the distinct
//! content tokens pooled across all slots of the valid action set, so ranks
//! always form a prefix of 0, 1, 2, ... and ties share a rank. End-of-slot
//! actions score exactly 0 under every static order and are excluded from
//! rank pools.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::canvas::{InsertionAction, Slot, ValidActionSet};
use crate::corpus::{TokenId, Vocabulary, EOS};
use crate::model::SlotDistributions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrderKind {
    Uniform,
    BinaryTree,
    Random,
    L2r,
    R2l,
    CommonFirst,
    RareFirst,
    ShortestFirst,
    LongestFirst,
    AlphaAz,
    AlphaZa,
    EasyFirst,
    HardFirst,
}

impl OrderKind {
    pub const ALL: [OrderKind; 13] = [
        OrderKind::Uniform,
        OrderKind::BinaryTree,
        OrderKind::Random,
        OrderKind::L2r,
        OrderKind::R2l,
        OrderKind::CommonFirst,
        OrderKind::RareFirst,
        OrderKind::ShortestFirst,
        OrderKind::LongestFirst,
        OrderKind::AlphaAz,
        OrderKind::AlphaZa,
        OrderKind::EasyFirst,
        OrderKind::HardFirst,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OrderKind::Uniform => "uniform",
            OrderKind::BinaryTree => "binary_tree",
            OrderKind::Random => "random",
            OrderKind::L2r => "l2r",
            OrderKind::R2l => "r2l",
            OrderKind::CommonFirst => "common_first",
            OrderKind::RareFirst => "rare_first",
            OrderKind::ShortestFirst => "shortest_first",
            OrderKind::LongestFirst => "longest_first",
            OrderKind::AlphaAz => "alpha_az",
            OrderKind::AlphaZa => "alpha_za",
            OrderKind::EasyFirst => "easy_first",
            OrderKind::HardFirst => "hard_first",
        }
    }

    /// Adaptive orders score actions with the model posterior instead of a
    /// fixed rule.
    pub fn is_adaptive(&self) -> bool {
        matches!(self, OrderKind::EasyFirst | OrderKind::HardFirst)
    }
}

impl fmt::Display for OrderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OrderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OrderKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = OrderKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown order kind `{s}`; valid kinds: {}", valid.join(", "))
            })
    }
}

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("order `{kind}` needs a model posterior")]
    MissingPosterior { kind: OrderKind },
    #[error("posterior has {got} slots but the canvas has {expected}")]
    PosteriorShape { got: usize, expected: usize },
}

/// An order kind bound to the vocabulary that supplies token strings and
/// corpus frequencies for the rank-based kinds.
#[derive(Debug, Clone, Copy)]
pub struct OrderSpec<'v> {
    pub kind: OrderKind,
    pub vocab: &'v Vocabulary,
}

impl<'v> OrderSpec<'v> {
    pub fn new(kind: OrderKind, vocab: &'v Vocabulary) -> Self {
        OrderSpec { kind, vocab }
    }

    /// Precomputes per-action scoring state for one valid action set.
    /// Adaptive kinds require `posterior` over the same canvas.
    pub fn scorer<'a>(
        &self,
        aset: &'a ValidActionSet,
        posterior: Option<&'a SlotDistributions>,
    ) -> Result<ActionScorer<'a>, OrderError> {
        let sign = match self.kind {
            OrderKind::R2l
            | OrderKind::RareFirst
            | OrderKind::LongestFirst
            | OrderKind::AlphaZa
            | OrderKind::HardFirst => -1.0,
            _ => 1.0,
        };
        let posterior = if self.kind.is_adaptive() {
            let p = posterior.ok_or(OrderError::MissingPosterior { kind: self.kind })?;
            if p.n_slots() != aset.slot_count() {
                return Err(OrderError::PosteriorShape {
                    got: p.n_slots(),
                    expected: aset.slot_count(),
                });
            }
            Some(p)
        } else {
            None
        };
        let pool: BTreeSet<TokenId> = aset
            .iter()
            .filter(|a| a.content != EOS)
            .map(|a| a.content)
            .collect();
        let pool: Vec<TokenId> = pool.into_iter().collect();
        let ranks = match self.kind {
            OrderKind::Random => Some(dense_ranks(&pool, |t| fnv1a64(self.vocab.token_str(t).as_bytes()))),
            OrderKind::CommonFirst | OrderKind::RareFirst => {
                Some(dense_ranks(&pool, |t| std::cmp::Reverse(self.vocab.frequency(t))))
            }
            OrderKind::ShortestFirst | OrderKind::LongestFirst => {
                Some(dense_ranks(&pool, |t| self.vocab.token_str(t).chars().count()))
            }
            OrderKind::AlphaAz | OrderKind::AlphaZa => {
                Some(dense_ranks(&pool, |t| self.vocab.token_str(t).to_string()))
            }
            _ => None,
        };
        Ok(ActionScorer {
            kind: self.kind,
            sign,
            slots: aset.slots(),
            ranks,
            posterior,
        })
    }

    /// Scores one action out of `aset`.
    pub fn score(
        &self,
        action: &InsertionAction,
        aset: &ValidActionSet,
        posterior: Option<&SlotDistributions>,
    ) -> Result<f64, OrderError> {
        Ok(self.scorer(aset, posterior)?.score(action))
    }

    /// All actions attaining the minimum score, in slot-then-span order.
    /// Ties are exact f64 equality; rank and position based orders produce
    /// integer or half-integer scores, so ties are well defined.
    pub fn best_actions(
        &self,
        aset: &ValidActionSet,
        posterior: Option<&SlotDistributions>,
    ) -> Result<Vec<InsertionAction>, OrderError> {
        let scorer = self.scorer(aset, posterior)?;
        let mut best = f64::INFINITY;
        for a in aset.iter() {
            best = best.min(scorer.score(a));
        }
        Ok(aset.iter().filter(|a| scorer.score(a) == best).copied().collect())
    }

    /// The minimum-score tie set restricted to insertions. End-of-slot
    /// actions are not insertions, so they do not compete here; the
    /// adherence metric checks decode-time insertions against this set.
    /// Empty only when the action set holds nothing but end-of-slot actions.
    pub fn best_insertions(
        &self,
        aset: &ValidActionSet,
        posterior: Option<&SlotDistributions>,
    ) -> Result<Vec<InsertionAction>, OrderError> {
        let scorer = self.scorer(aset, posterior)?;
        let mut best = f64::INFINITY;
        for a in aset.iter().filter(|a| a.content != EOS) {
            best = best.min(scorer.score(a));
        }
        Ok(aset
            .iter()
            .filter(|a| a.content != EOS && scorer.score(a) == best)
            .copied()
            .collect())
    }
}

/// Scoring state built by [`OrderSpec::scorer`]; valid for one action set.
pub struct ActionScorer<'a> {
    kind: OrderKind,
    sign: f64,
    slots: &'a [Slot],
    ranks: Option<HashMap<TokenId, f64>>,
    posterior: Option<&'a SlotDistributions>,
}

impl ActionScorer<'_> {
    /// Scores an action from the originating valid action set; lower is
    /// better. Panics if a non-end-of-slot action lacks its target position
    /// (i.e. was not produced by `valid_actions`).
    pub fn score(&self, action: &InsertionAction) -> f64 {
        if let Some(p) = self.posterior {
            return self.sign * -p.joint_logp(action.content, action.location);
        }
        if action.content == EOS {
            return 0.0;
        }
        let base = match self.kind {
            OrderKind::Uniform => 0.0,
            OrderKind::BinaryTree => {
                let (i, j) = self.slots[action.location].span;
                let s = target_of(action);
                (s as f64 - (i + j - 1) as f64 / 2.0).abs()
            }
            OrderKind::L2r | OrderKind::R2l => target_of(action) as f64,
            _ => self.ranks.as_ref().expect("rank table")[&action.content],
        };
        self.sign * base
    }
}

fn target_of(action: &InsertionAction) -> usize {
    action
        .target_pos
        .expect("insertion action outside the valid action set")
}

fn dense_ranks<K: Ord>(pool: &[TokenId], key: impl Fn(TokenId) -> K) -> HashMap<TokenId, f64> {
    let mut keyed: Vec<(K, TokenId)> = pool.iter().map(|&t| (key(t), t)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = HashMap::with_capacity(keyed.len());
    let mut rank = 0usize;
    for i in 0..keyed.len() {
        if i > 0 && keyed[i].0 > keyed[i - 1].0 {
            rank += 1;
        }
        out.insert(keyed[i].1, rank as f64);
    }
    out
}

/// 64-bit FNV-1a over the token string; the `random` order ranks tokens by
/// this hash so that its shuffle is stable across runs and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
