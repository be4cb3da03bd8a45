//! Turns order scores into training targets.
//!
//! Every valid action gets reward `-O(a)` (invalid actions implicitly carry
//! reward negative infinity), and the oracle policy is the temperature
//! softmax `q(a) proportional to exp(-O(a) / tau)` over the valid action set.
//! Per slot, action mass is merged by content token; across slots, the
//! location target splits by each slot's pooled insertion mass, so slots with
//! nothing left to insert get zero and end-of-slot supervision flows only
//! through their content conditionals (one-hot on end-of-slot). A canvas with
//! nothing left anywhere yields a uniform location target. Training minimizes
//! `KL(q || p)` per slot plus `KL(q_loc || p_loc)`, so gradients with respect
//! to model logits are the softmax-KL difference `p - q`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::canvas::ValidActionSet;
use crate::corpus::{TokenId, EOS};
use crate::model::SlotDistributions;
use crate::orders::{OrderError, OrderSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("temperature must be a positive finite number, got {0}")]
    InvalidTemperature(f64),
    #[error("policy has {policy_slots} slots but the model output has {model_slots}")]
    SlotMismatch { policy_slots: usize, model_slots: usize },
    #[error("policy token id {token} is out of range for vocab size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error(transparent)]
    Order(#[from] OrderError),
}

/// Oracle targets for one canvas: per-slot content distributions (sparse,
/// sorted by token id) and the across-slot location distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePolicy {
    pub temperature: f64,
    slots: Vec<Vec<(TokenId, f64)>>,
    location: Vec<f64>,
}

impl OraclePolicy {
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Content targets of slot `l` as `(token, probability)` pairs sorted by
    /// token id; probabilities sum to 1.
    pub fn contents(&self, l: usize) -> &[(TokenId, f64)] {
        &self.slots[l]
    }

    pub fn prob_of(&self, l: usize, token: TokenId) -> f64 {
        self.slots[l]
            .binary_search_by_key(&token, |e| e.0)
            .map(|i| self.slots[l][i].1)
            .unwrap_or(0.0)
    }

    /// Target distribution over slots; sums to 1.
    pub fn location_target(&self) -> &[f64] {
        &self.location
    }
}

/// Builds the temperature-softmax oracle for one valid action set.
/// Numerically stable for any positive finite `tau`; at extreme temperatures
/// the policy degenerates to argmin one-hot or action-uniform.
pub fn build_policy(
    order: &OrderSpec,
    aset: &ValidActionSet,
    tau: f64,
    posterior: Option<&SlotDistributions>,
) -> Result<OraclePolicy, OracleError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(OracleError::InvalidTemperature(tau));
    }
    let scorer = order.scorer(aset, posterior)?;
    let n_slots = aset.slot_count();
    let mut slots = Vec::with_capacity(n_slots);
    let mut insertion_log_mass = Vec::with_capacity(n_slots);
    for l in 0..n_slots {
        let actions = aset.slot_actions(l);
        let logits: Vec<f64> = actions.iter().map(|a| -scorer.score(a) / tau).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let masses: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
        let z: f64 = masses.iter().sum();
        let mut by_content: BTreeMap<TokenId, f64> = BTreeMap::new();
        for (a, mass) in actions.iter().zip(&masses) {
            *by_content.entry(a.content).or_insert(0.0) += mass / z;
        }
        slots.push(by_content.into_iter().collect::<Vec<_>>());
        let ins: f64 = actions
            .iter()
            .zip(&masses)
            .filter(|(a, _)| a.content != EOS)
            .map(|(_, &mass)| mass)
            .sum();
        insertion_log_mass.push(if ins > 0.0 { m + ins.ln() } else { f64::NEG_INFINITY });
    }
    let m = insertion_log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let location = if m == f64::NEG_INFINITY {
        vec![1.0 / n_slots as f64; n_slots]
    } else {
        let shares: Vec<f64> = insertion_log_mass.iter().map(|&lm| (lm - m).exp()).collect();
        let total: f64 = shares.iter().sum();
        shares.into_iter().map(|s| s / total).collect()
    };
    Ok(OraclePolicy { temperature: tau, slots, location })
}

/// Per-slot `KL(q || p)` over the content vocabulary plus their mean.
/// Oracle-zero entries contribute nothing; a model zero under oracle mass
/// yields an infinite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLoss {
    pub per_slot: Vec<f64>,
    pub sequence: f64,
}

pub fn slot_kl(policy: &OraclePolicy, model: &SlotDistributions) -> Result<SlotLoss, OracleError> {
    check_shapes(policy, model)?;
    let per_slot: Vec<f64> = (0..policy.slot_count())
        .map(|l| {
            let logp = model.content_logp(l);
            policy.contents(l)
                .iter()
                .filter(|(_, q)| *q > 0.0)
                .map(|&(c, q)| q * (q.ln() - logp[c]))
                .sum()
        })
        .collect();
    let sequence = per_slot.iter().sum::<f64>() / per_slot.len() as f64;
    Ok(SlotLoss { per_slot, sequence })
}

/// `KL(q_loc || p_loc)` between the oracle's location target and the model's
/// location distribution.
pub fn location_kl(policy: &OraclePolicy, model: &SlotDistributions) -> Result<f64, OracleError> {
    check_shapes(policy, model)?;
    Ok(policy
        .location_target()
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > 0.0)
        .map(|(l, &q)| q * (q.ln() - model.location_logp(l)))
        .sum())
}

fn check_shapes(policy: &OraclePolicy, model: &SlotDistributions) -> Result<(), OracleError> {
    if policy.slot_count() != model.n_slots() {
        return Err(OracleError::SlotMismatch {
            policy_slots: policy.slot_count(),
            model_slots: model.n_slots(),
        });
    }
    for l in 0..policy.slot_count() {
        if let Some(&(token, _)) = policy.contents(l).last() {
            if token >= model.vocab_size() {
                return Err(OracleError::TokenOutOfRange { token, vocab_size: model.vocab_size() });
            }
        }
    }
    Ok(())
}

/// Behaviour of one order at extreme temperatures on one canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureDiagnostic {
    pub low_tau: f64,
    pub high_tau: f64,
    /// Smallest per-slot mass carried by that slot's argmin contents at `low_tau`.
    pub min_argmin_mass: f64,
    /// Location mass on slots holding a globally minimal insertion at `low_tau`;
    /// 1 by convention when nothing is left to insert.
    pub argmin_location_mass: f64,
    /// Worst deviation from action-uniform content mass at `high_tau`.
    pub max_uniform_deviation: f64,
    pub one_hot_ok: bool,
    pub uniform_ok: bool,
}

/// Probes the `tau -> 0` one-hot limit (at `tau = 1e-3`) and the
/// `tau -> infinity` uniform limit (at `tau = 1e6`). In the uniform limit a
/// content's mass tends to its action multiplicity over the slot's action
/// count.
pub fn temperature_limits(
    order: &OrderSpec,
    aset: &ValidActionSet,
    posterior: Option<&SlotDistributions>,
) -> Result<TemperatureDiagnostic, OracleError> {
    let (low_tau, high_tau) = (1e-3, 1e6);
    let scorer = order.scorer(aset, posterior)?;

    let low = build_policy(order, aset, low_tau, posterior)?;
    let mut min_argmin_mass = f64::INFINITY;
    let mut global_min = f64::INFINITY;
    for a in aset.iter().filter(|a| a.content != EOS) {
        global_min = global_min.min(scorer.score(a));
    }
    let mut argmin_location_mass = if global_min.is_finite() { 0.0 } else { 1.0 };
    for l in 0..aset.slot_count() {
        let actions = aset.slot_actions(l);
        let slot_min = actions.iter().map(|a| scorer.score(a)).fold(f64::INFINITY, f64::min);
        let mass: f64 = actions
            .iter()
            .filter(|a| scorer.score(a) == slot_min)
            .map(|a| a.content)
            .collect::<std::collections::BTreeSet<_>>()
            .iter()
            .map(|&c| low.prob_of(l, c))
            .sum();
        min_argmin_mass = min_argmin_mass.min(mass);
        if actions.iter().any(|a| a.content != EOS && scorer.score(a) == global_min) {
            argmin_location_mass += low.location_target()[l];
        }
    }

    let high = build_policy(order, aset, high_tau, posterior)?;
    let mut max_uniform_deviation = 0.0f64;
    for l in 0..aset.slot_count() {
        let actions = aset.slot_actions(l);
        let m = actions.len() as f64;
        let mut multiplicity: BTreeMap<TokenId, usize> = BTreeMap::new();
        for a in actions {
            *multiplicity.entry(a.content).or_insert(0) += 1;
        }
        for (&c, &k) in &multiplicity {
            let dev = (high.prob_of(l, c) - k as f64 / m).abs();
            max_uniform_deviation = max_uniform_deviation.max(dev);
        }
    }

    Ok(TemperatureDiagnostic {
        low_tau,
        high_tau,
        min_argmin_mass,
        argmin_location_mass,
        max_uniform_deviation,
        one_hot_ok: min_argmin_mass >= 1.0 - 1e-6 && argmin_location_mass >= 1.0 - 1e-6,
        uniform_ok: max_uniform_deviation <= 1e-4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::{rollin_sample, valid_actions, Canvas};
    use crate::corpus::{Vocabulary, EOS};
    use crate::orders::OrderKind;
    use proptest::prelude::*;

    const B: TokenId = 5;
    const A: TokenId = 6;

    fn ab_vocab() -> Vocabulary {
        Vocabulary::from_parts(vec![("b".into(), 9), ("a".into(), 4)])
    }

    fn empty_canvas(reference: Vec<TokenId>) -> Canvas {
        Canvas::from_kept(reference, &[])
    }

    #[test]
    fn two_action_softmax_matches_frozen_values() {
        // l2r scores on an empty 2-token canvas are {0, 1}.
        let vocab = ab_vocab();
        let canvas = empty_canvas(vec![B, A]);
        let aset = valid_actions(&canvas).unwrap();
        let spec = OrderSpec::new(OrderKind::L2r, &vocab);

        let p1 = build_policy(&spec, &aset, 1.0, None).unwrap();
        assert!((p1.prob_of(0, B) - 0.7311).abs() < 1e-4);
        assert!((p1.prob_of(0, A) - 0.2689).abs() < 1e-4);

        let p_half = build_policy(&spec, &aset, 0.5, None).unwrap();
        assert!((p_half.prob_of(0, B) - 0.8808).abs() < 1e-4);
        assert!((p_half.prob_of(0, A) - 0.1192).abs() < 1e-4);
        assert!(
            p_half.prob_of(0, B) > p1.prob_of(0, B),
            "lower temperature sharpens the argmin"
        );
        assert_eq!(p1.location_target(), &[1.0]);
    }

    #[test]
    fn uniform_order_splits_mass_by_action_multiplicity() {
        let vocab = ab_vocab();
        let canvas = empty_canvas(vec![A, B, A]);
        let aset = valid_actions(&canvas).unwrap();
        let spec = OrderSpec::new(OrderKind::Uniform, &vocab);
        let policy = build_policy(&spec, &aset, 1.0, None).unwrap();
        assert!((policy.prob_of(0, A) - 2.0 / 3.0).abs() < 1e-12);
        assert!((policy.prob_of(0, B) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn location_target_pools_insertion_mass_only() {
        // Canvas [a] over reference [b, a]: slot 0 holds {b}, slot 1 is empty.
        // Only slot 0 has anything to insert, so it takes all location mass.
        let vocab = ab_vocab();
        let canvas = Canvas::from_kept(vec![B, A], &[1]);
        let aset = valid_actions(&canvas).unwrap();
        let spec = OrderSpec::new(OrderKind::Uniform, &vocab);
        let policy = build_policy(&spec, &aset, 1.0, None).unwrap();
        assert!((policy.location_target()[0] - 1.0).abs() < 1e-12);
        assert!(policy.location_target()[1].abs() < 1e-12);

        // Canvas [a] over reference [b, a, b, a]: slot 0 misses {b}, slot 1
        // misses {b, a}. Uniform shares follow action counts: 1/3 and 2/3.
        let canvas = Canvas::from_kept(vec![B, A, B, A], &[1]);
        let aset = valid_actions(&canvas).unwrap();
        let policy = build_policy(&OrderSpec::new(OrderKind::Uniform, &vocab), &aset, 1.0, None).unwrap();
        assert!((policy.location_target()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((policy.location_target()[1] - 2.0 / 3.0).abs() < 1e-12);

        // Under l2r with tau = 1: slot 0 pools exp(0), slot 1 pools
        // exp(-2) + exp(-3); shares follow those masses.
        let policy = build_policy(&OrderSpec::new(OrderKind::L2r, &vocab), &aset, 1.0, None).unwrap();
        let m0 = 1.0f64;
        let m1 = (-2.0f64).exp() + (-3.0f64).exp();
        assert!((policy.location_target()[0] - m0 / (m0 + m1)).abs() < 1e-12);
        assert!((policy.location_target()[1] - m1 / (m0 + m1)).abs() < 1e-12);

        // A complete canvas has nothing to insert anywhere: uniform location.
        let canvas = Canvas::from_kept(vec![B, A], &[0, 1]);
        let aset = valid_actions(&canvas).unwrap();
        let policy = build_policy(&spec, &aset, 1.0, None).unwrap();
        for l in 0..3 {
            assert!((policy.location_target()[l] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_or_non_finite_temperatures() {
        let vocab = ab_vocab();
        let canvas = empty_canvas(vec![B, A]);
        let aset = valid_actions(&canvas).unwrap();
        let spec = OrderSpec::new(OrderKind::L2r, &vocab);
        for tau in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                build_policy(&spec, &aset, tau, None),
                Err(OracleError::InvalidTemperature(_))
            ));
        }
    }

    #[test]
    fn one_hot_kl_against_known_model_mass_is_ln2() {
        let vocab = ab_vocab();
        let canvas = Canvas::from_kept(vec![B, A], &[1]);
        let aset = valid_actions(&canvas).unwrap();
        // tau small: slot 0 target is one-hot on b, slot 1 on EOS.
        let policy = build_policy(&OrderSpec::new(OrderKind::L2r, &vocab), &aset, 1e-3, None).unwrap();
        assert!((policy.prob_of(0, B) - 1.0).abs() < 1e-12);

        let v = vocab.size();
        // Model puts exactly 1/2 on b in slot 0 and on EOS in slot 1.
        let spread = ((1.0f64 - 0.5) / (v - 1) as f64).ln();
        let mut content = vec![spread; 2 * v];
        content[B] = 0.5f64.ln();
        content[v + EOS] = 0.5f64.ln();
        let model = SlotDistributions::new(content, vec![0.25f64.ln(), 0.75f64.ln()], v);

        let loss = slot_kl(&policy, &model).unwrap();
        assert!((loss.per_slot[0] - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((loss.per_slot[1] - std::f64::consts::LN_2).abs() < 1e-9);
        assert!((loss.sequence - std::f64::consts::LN_2).abs() < 1e-9);
        // Only slot 0 has content left, so q_loc is one-hot on it.
        let loc = location_kl(&policy, &model).unwrap();
        let expect = (1.0f64 / 0.25).ln();
        assert!((loc - expect).abs() < 1e-9, "loc kl {loc} vs {expect}");
    }

    #[test]
    fn uniform_oracle_on_two_tokens_vs_uniform_model_on_hundred_is_ln50() {
        let content: Vec<(String, u64)> = (0..95).map(|i| (format!("t{i:02}"), 1)).collect();
        let vocab = Vocabulary::from_parts(content);
        assert_eq!(vocab.size(), 100);
        let canvas = empty_canvas(vec![5, 6]);
        let aset = valid_actions(&canvas).unwrap();
        let policy = build_policy(&OrderSpec::new(OrderKind::Uniform, &vocab), &aset, 1.0, None).unwrap();
        let model = SlotDistributions::new(vec![(1.0f64 / 100.0).ln(); 100], vec![0.0], 100);
        let loss = slot_kl(&policy, &model).unwrap();
        assert!((loss.sequence - 50.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_is_zero_exactly_when_model_matches_oracle() {
        let vocab = ab_vocab();
        let canvas = empty_canvas(vec![A, B, A]);
        let aset = valid_actions(&canvas).unwrap();
        let policy = build_policy(&OrderSpec::new(OrderKind::Uniform, &vocab), &aset, 1.0, None).unwrap();
        let v = vocab.size();
        // Exact match on the oracle support; zero-mass tokens elsewhere.
        let mut content = vec![f64::NEG_INFINITY; v];
        content[A] = (2.0f64 / 3.0).ln();
        content[B] = (1.0f64 / 3.0).ln();
        let model = SlotDistributions::new(content, vec![0.0], v);
        let loss = slot_kl(&policy, &model).unwrap();
        assert!(loss.sequence.abs() < 1e-9, "matching model: {}", loss.sequence);

        let worse = SlotDistributions::new(vec![(1.0f64 / v as f64).ln(); v], vec![0.0], v);
        assert!(slot_kl(&policy, &worse).unwrap().sequence > 1e-3);
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let vocab = ab_vocab();
        let canvas = empty_canvas(vec![B, A]);
        let aset = valid_actions(&canvas).unwrap();
        let policy = build_policy(&OrderSpec::new(OrderKind::L2r, &vocab), &aset, 1.0, None).unwrap();
        let two_slots = SlotDistributions::new(vec![0.0; 2 * vocab.size()], vec![0.0; 2], vocab.size());
        assert!(matches!(
            slot_kl(&policy, &two_slots),
            Err(OracleError::SlotMismatch { policy_slots: 1, model_slots: 2 })
        ));
        let tiny_vocab = SlotDistributions::new(vec![0.0; 3], vec![0.0], 3);
        assert!(matches!(
            slot_kl(&policy, &tiny_vocab),
            Err(OracleError::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn temperature_limits_hold_for_static_orders() {
        use rand::SeedableRng;
        let vocab = snacky_vocab();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for seed_ref in 0..40 {
            let reference: Vec<TokenId> = (0..(1 + seed_ref % 6))
                .map(|i| 5 + (seed_ref * 7 + i * 3) % 7)
                .collect();
            let canvas = rollin_sample(&reference, &mut rng);
            let aset = valid_actions(&canvas).unwrap();
            for kind in OrderKind::ALL.iter().filter(|k| !k.is_adaptive()) {
                let spec = OrderSpec::new(*kind, &vocab);
                let diag = temperature_limits(&spec, &aset, None).unwrap();
                assert!(diag.one_hot_ok, "{kind}: {diag:?}");
                assert!(diag.uniform_ok, "{kind}: {diag:?}");
            }
        }
    }

    fn snacky_vocab() -> Vocabulary {
        Vocabulary::from_parts(
            (0..7).map(|i| (format!("tok{i}"), (i as u64 % 3) * 10 + 1)).collect(),
        )
    }

    #[test]
    fn softmax_kl_gradient_identity_checks_against_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 6;
        let q: Vec<f64> = {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / z).collect()
        };
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kl = |z: &[f64]| -> f64 {
            let mut lp = z.to_vec();
            crate::model::log_softmax_in_place(&mut lp);
            q.iter().zip(&lp).map(|(&qi, &lpi)| qi * (qi.ln() - lpi)).sum()
        };
        let p: Vec<f64> = {
            let mut lp = logits.clone();
            crate::model::log_softmax_in_place(&mut lp);
            lp.into_iter().map(f64::exp).collect()
        };
        for i in 0..n {
            let mut plus = logits.clone();
            let mut minus = logits.clone();
            plus[i] += 1e-5;
            minus[i] -= 1e-5;
            let fd = (kl(&plus) - kl(&minus)) / 2e-5;
            let analytic = p[i] - q[i];
            assert!((fd - analytic).abs() < 1e-8, "component {i}: fd={fd} analytic={analytic}");
        }
    }

    proptest! {
        #[test]
        fn policies_normalize_per_slot_and_across_slots(
            reference in proptest::collection::vec(5usize..12, 1..8),
            seed in 0u64..300,
            tau in prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
        ) {
            use rand::SeedableRng;
            let vocab = snacky_vocab();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let canvas = rollin_sample(&reference, &mut rng);
            let aset = valid_actions(&canvas).unwrap();
            for kind in OrderKind::ALL.iter().filter(|k| !k.is_adaptive()) {
                let policy = build_policy(&OrderSpec::new(*kind, &vocab), &aset, tau, None).unwrap();
                for l in 0..policy.slot_count() {
                    let total: f64 = policy.contents(l).iter().map(|e| e.1).sum();
                    prop_assert!((total - 1.0).abs() < 1e-9, "{} slot {}", kind, l);
                }
                let loc: f64 = policy.location_target().iter().sum();
                prop_assert!((loc - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn lower_order_score_means_higher_oracle_mass(
            reference in proptest::collection::vec(5usize..12, 2..8),
            seed in 0u64..300,
            tau in prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
        ) {
            use rand::SeedableRng;
            let vocab = snacky_vocab();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let canvas = rollin_sample(&reference, &mut rng);
            let aset = valid_actions(&canvas).unwrap();
            for kind in [OrderKind::L2r, OrderKind::CommonFirst, OrderKind::BinaryTree] {
                let spec = OrderSpec::new(kind, &vocab);
                let scorer = spec.scorer(&aset, None).unwrap();
                let policy = build_policy(&spec, &aset, tau, None).unwrap();
                for l in 0..aset.slot_count() {
                    let actions = aset.slot_actions(l);
                    // Only contents appearing exactly once keep a 1:1 score.
                    let once: Vec<_> = actions
                        .iter()
                        .filter(|a| actions.iter().filter(|b| b.content == a.content).count() == 1)
                        .collect();
                    for a in &once {
                        for b in &once {
                            if scorer.score(a) < scorer.score(b) {
                                prop_assert!(
                                    policy.prob_of(l, a.content) > policy.prob_of(l, b.content),
                                    "{} slot {}", kind, l
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}
