//! Partial hypotheses and the insertion actions that complete them.
//!
//! A hypothesis of length `n` exposes `n + 1` slots (before each token and
//! after the last). When the canvas is aligned against a reference, slot `l`
//! covers a half-open span of reference positions still missing there; each
//! such position yields one valid insertion action, and an empty slot yields
//! the end-of-slot action instead.

use rand::Rng;
use thiserror::Error;

use crate::corpus::{TokenId, EOS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanvasError {
    #[error("canvas has no alignment against a reference")]
    UnalignedCanvas,
    #[error("more than one insertion targets slot {location}")]
    DuplicateSlotInsertion { location: usize },
    #[error("location {location} out of range for {slots} slots")]
    LocationOutOfRange { location: usize, slots: usize },
}

/// A partial hypothesis, optionally aligned against a reference.
///
/// `alignment[k]` is the reference position realised by `hypothesis[k]`;
/// it is strictly increasing and token-matching by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    hypothesis: Vec<TokenId>,
    reference: Option<Vec<TokenId>>,
    alignment: Option<Vec<usize>>,
}

impl Canvas {
    /// A hypothesis with no reference attached (decode-time state).
    pub fn bare(hypothesis: Vec<TokenId>) -> Self {
        Canvas { hypothesis, reference: None, alignment: None }
    }

    /// The sub-hypothesis of `reference` keeping exactly the positions in
    /// `kept`, which must be strictly increasing and in range.
    pub fn from_kept(reference: Vec<TokenId>, kept: &[usize]) -> Self {
        assert!(
            kept.windows(2).all(|w| w[0] < w[1]),
            "kept positions must be strictly increasing"
        );
        assert!(kept.iter().all(|&p| p < reference.len()), "kept position out of range");
        let hypothesis = kept.iter().map(|&p| reference[p]).collect();
        Canvas {
            hypothesis,
            reference: Some(reference),
            alignment: Some(kept.to_vec()),
        }
    }

    pub fn hypothesis(&self) -> &[TokenId] {
        &self.hypothesis
    }

    pub fn reference(&self) -> Option<&[TokenId]> {
        self.reference.as_deref()
    }

    pub fn alignment(&self) -> Option<&[usize]> {
        self.alignment.as_deref()
    }

    pub fn len(&self) -> usize {
        self.hypothesis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypothesis.is_empty()
    }

    pub fn is_aligned(&self) -> bool {
        self.alignment.is_some()
    }

    /// True when an aligned canvas already realises its whole reference.
    pub fn is_complete(&self) -> bool {
        match &self.reference {
            Some(r) => self.hypothesis.len() == r.len(),
            None => false,
        }
    }
}

/// One slot of an aligned canvas: `span` is the half-open range of reference
/// positions missing between the slot's neighbouring hypothesis tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub index: usize,
    pub span: (usize, usize),
}

impl Slot {
    pub fn is_empty(&self) -> bool {
        self.span.0 == self.span.1
    }

    pub fn len(&self) -> usize {
        self.span.1 - self.span.0
    }
}

/// Insert `content` into slot `location`. `target_pos` is the reference
/// position the action realises; it is `None` for end-of-slot actions and for
/// free decode insertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InsertionAction {
    pub content: TokenId,
    pub location: usize,
    pub target_pos: Option<usize>,
}

/// All valid actions of an aligned canvas, grouped by slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidActionSet {
    slots: Vec<Slot>,
    per_slot: Vec<Vec<InsertionAction>>,
}

impl ValidActionSet {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_actions(&self, location: usize) -> &[InsertionAction] {
        &self.per_slot[location]
    }

    pub fn iter(&self) -> impl Iterator<Item = &InsertionAction> {
        self.per_slot.iter().flatten()
    }

    /// Total number of valid actions across all slots.
    pub fn len(&self) -> usize {
        self.per_slot.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enumerates A*(canvas): one action per missing reference position in each
/// slot's span, or the end-of-slot action for empty slots.
pub fn valid_actions(canvas: &Canvas) -> Result<ValidActionSet, CanvasError> {
    let (reference, alignment) = match (canvas.reference(), canvas.alignment()) {
        (Some(r), Some(a)) => (r, a),
        _ => return Err(CanvasError::UnalignedCanvas),
    };
    let n = alignment.len();
    let mut slots = Vec::with_capacity(n + 1);
    let mut per_slot = Vec::with_capacity(n + 1);
    for l in 0..=n {
        let start = if l == 0 { 0 } else { alignment[l - 1] + 1 };
        let end = if l == n { reference.len() } else { alignment[l] };
        slots.push(Slot { index: l, span: (start, end) });
        let actions: Vec<InsertionAction> = if start == end {
            vec![InsertionAction { content: EOS, location: l, target_pos: None }]
        } else {
            (start..end)
                .map(|s| InsertionAction { content: reference[s], location: l, target_pos: Some(s) })
                .collect()
        };
        per_slot.push(actions);
    }
    Ok(ValidActionSet { slots, per_slot })
}

/// Applies at most one insertion per slot simultaneously. End-of-slot actions
/// are no-ops on the hypothesis. When every insertion carries a `target_pos`
/// consistent with the old alignment, the result stays aligned; otherwise the
/// alignment is dropped (callers may re-align).
pub fn apply(canvas: &Canvas, actions: &[InsertionAction]) -> Result<Canvas, CanvasError> {
    let n = canvas.len();
    let mut ins: Vec<Option<&InsertionAction>> = vec![None; n + 1];
    for a in actions {
        if a.location > n {
            return Err(CanvasError::LocationOutOfRange { location: a.location, slots: n + 1 });
        }
        if a.content == EOS {
            continue;
        }
        if ins[a.location].is_some() {
            return Err(CanvasError::DuplicateSlotInsertion { location: a.location });
        }
        ins[a.location] = Some(a);
    }

    let mut hypothesis = Vec::with_capacity(n + 1);
    let mut kept: Option<Vec<usize>> = match (&canvas.reference, &canvas.alignment) {
        (Some(_), Some(_)) => Some(Vec::with_capacity(n + 1)),
        _ => None,
    };
    for l in 0..=n {
        if let Some(a) = ins[l] {
            hypothesis.push(a.content);
            match (&mut kept, a.target_pos) {
                (Some(k), Some(s)) => k.push(s),
                (k, _) => *k = None,
            }
        }
        if l < n {
            hypothesis.push(canvas.hypothesis[l]);
            if let Some(k) = &mut kept {
                k.push(canvas.alignment.as_ref().unwrap()[l]);
            }
        }
    }

    let alignment = kept.filter(|k| {
        let r = canvas.reference.as_ref().unwrap();
        k.windows(2).all(|w| w[0] < w[1])
            && k.iter().zip(&hypothesis) .all(|(&s, &c)| s < r.len() && r[s] == c)
    });
    Ok(Canvas {
        hypothesis,
        reference: canvas.reference.clone(),
        alignment,
    })
}

/// Draws a training canvas from `reference`: the kept-token count `k` is
/// uniform on `0..=n` and the kept index set is uniform among the
/// `C(n, k)` subsets of that size.
pub fn rollin_sample<R: Rng + ?Sized>(reference: &[TokenId], rng: &mut R) -> Canvas {
    let n = reference.len();
    let k = rng.gen_range(0..=n);
    let mut kept = rand::seq::index::sample(rng, n, k).into_vec();
    kept.sort_unstable();
    Canvas::from_kept(reference.to_vec(), &kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignSide {
    Left,
    Right,
}

/// Greedily matches `hyp` inside `reference` as a subsequence, packing matches
/// as far left or right as possible. `None` when `hyp` is not a subsequence.
pub fn align(hyp: &[TokenId], reference: &[TokenId], side: AlignSide) -> Option<Vec<usize>> {
    match side {
        AlignSide::Left => {
            let mut out = Vec::with_capacity(hyp.len());
            let mut i = 0usize;
            for &tok in hyp {
                while i < reference.len() && reference[i] != tok {
                    i += 1;
                }
                if i == reference.len() {
                    return None;
                }
                out.push(i);
                i += 1;
            }
            Some(out)
        }
        AlignSide::Right => {
            let mut out = Vec::with_capacity(hyp.len());
            let mut i = reference.len();
            for &tok in hyp.iter().rev() {
                while i > 0 && reference[i - 1] != tok {
                    i -= 1;
                }
                if i == 0 {
                    return None;
                }
                out.push(i - 1);
                i -= 1;
            }
            out.reverse();
            Some(out)
        }
    }
}
