//! Probability accounting over small vocabularies, checked by walking every
//! string instead of going through the library enumerator.

use std::collections::HashMap;

use kldpg_core::ebm::{enumerate_outcomes, Ebm};
use kldpg_core::lang::compile_check;
use kldpg_core::policy::sample_many;
use kldpg_core::tiny::{materialize, TinyConfig};
use kldpg_core::tuning::exact_reverse_kl;
use kldpg_core::{MiniLang, Policy, TabularPolicy, TokenId, TokenSeq, Vocab};
use proptest::prelude::*;

/// Probability of every outcome up to `l_max`, by direct recursion on
/// `next_dist` probabilities.
fn walk<P: Policy>(policy: &P, l_max: usize) -> Vec<(TokenSeq, f64)> {
    let v = policy.vocab();
    let mut out = Vec::new();
    let mut frontier = vec![(vec![v.bos()], 1.0)];
    while let Some((ids, prob)) = frontier.pop() {
        if ids.len() == l_max {
            out.push((TokenSeq::truncated(ids[1..].to_vec()), prob));
            continue;
        }
        let dist = policy.next_dist(&ids);
        for t in (0..v.len()).map(|i| TokenId(i as u16)) {
            let q = dist.probs[t.index()];
            if q == 0.0 {
                continue;
            }
            if t == v.eos() {
                out.push((TokenSeq::terminated(ids[1..].to_vec()), prob * q));
            } else {
                let mut next = ids.clone();
                next.push(t);
                frontier.push((next, prob * q));
            }
        }
    }
    out
}

fn small_vocab() -> Vocab {
    Vocab::with_surfaces(&["x", "1", "=", ";"]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outcome_masses_sum_to_one(seed in any::<u64>(), k in 2usize..4, l_max in 2usize..7) {
        let policy = TabularPolicy::random(small_vocab(), k, 2.0, seed);
        let outcomes = walk(&policy, l_max);
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (x, p) in &outcomes {
            prop_assert!((policy.outcome_logprob(x).exp() - p).abs() < 1e-12 * p.max(1e-300).max(1.0));
        }
    }

    #[test]
    fn enumerator_matches_walk(seed in any::<u64>(), l_max in 2usize..7) {
        let policy = TabularPolicy::random(small_vocab(), 2, 2.0, seed);
        let mut walked: HashMap<TokenSeq, f64> = walk(&policy, l_max).into_iter().collect();
        let e = enumerate_outcomes(&policy, l_max).unwrap();
        for (x, lp) in e.outcomes() {
            let p = walked.remove(x).unwrap_or(0.0);
            prop_assert!((lp.exp() - p).abs() < 1e-12);
        }
        prop_assert!(walked.values().all(|&p| p == 0.0));
    }

    #[test]
    fn partition_function_matches_walk(seed in any::<u64>()) {
        let policy = TabularPolicy::random(small_vocab(), 2, 1.5, seed);
        let scorer = MiniLang::new(small_vocab());
        let z: f64 = walk(&policy, 7)
            .iter()
            .filter(|(x, _)| compile_check(&small_vocab(), x).ok())
            .map(|(_, p)| p)
            .sum();
        let exact = Ebm::new(&policy, &scorer).exact_z(7).unwrap().z;
        prop_assert!((exact - z).abs() <= 1e-12 * z.max(1e-300));
    }
}

#[test]
fn sampler_matches_outcome_distribution() {
    let policy = TabularPolicy::random(small_vocab(), 2, 1.0, 5);
    let n = 200_000;
    let mut counts: HashMap<TokenSeq, usize> = HashMap::new();
    for x in sample_many(&policy, 9, n, 5, &[]) {
        *counts.entry(x).or_insert(0) += 1;
    }
    let tv: f64 = 0.5
        * walk(&policy, 5)
            .iter()
            .map(|(x, p)| (counts.get(x).copied().unwrap_or(0) as f64 / n as f64 - p).abs())
            .sum::<f64>();
    assert!(tv < 0.02, "{tv}");
}

#[test]
fn materialized_target_reproduces_p() {
    let tiny = TinyConfig::new();
    let exact = Ebm::new(&tiny.a, &tiny.scorer).exact_p(tiny.l_max).unwrap();
    let pi = materialize(&exact, &tiny.vocab, tiny.l_max);
    for (x, p, _) in &exact.entries {
        assert!((pi.outcome_logprob(x).exp() - p).abs() < 1e-9);
    }
    assert!(exact.kl_to(&pi).abs() < 1e-9);
    // The base model puts mass outside the support, so it is strictly farther.
    assert!(exact.kl_to(&tiny.a) > 0.1);
    assert!(
        exact_reverse_kl(&tiny.a, &tiny.a, tiny.l_max)
            .unwrap()
            .abs()
            < 1e-12
    );
}
