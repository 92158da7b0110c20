//! The product-of-experts target `P(x) = a(x) b(x)`, its partition function,
//! and the normalized distribution `p = P / Z`.
//!
//! Scores are handled in log space; `P(x) = 0` is the `-inf` log-score and is
//! never exponentiated into arithmetic.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::lang::{Scorer, TokenId, TokenSeq};
use crate::policy::{sample, sample_many, Policy};

/// Upper bound on `Σ_{l ≤ L_max} |V|^l` for exhaustive enumeration.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EbmError {
    #[error("enumeration needs {needed} states, budget is {ENUMERATION_BUDGET}")]
    BudgetExceeded { needed: u128 },
    #[error("no accepted sample within {0} attempts")]
    BudgetExhausted(usize),
    #[error("partition function is zero")]
    DegenerateZ,
}

/// Every sampling outcome of a policy up to a length limit, with its log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub terminated: Vec<(TokenSeq, f64)>,
    pub truncated: Vec<(TokenSeq, f64)>,
}

impl Enumeration {
    pub fn outcomes(&self) -> impl Iterator<Item = &(TokenSeq, f64)> {
        self.terminated.iter().chain(&self.truncated)
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncated.iter().map(|(_, lp)| lp.exp()).sum()
    }
}

/// `Σ_{l=0}^{l_max} |V|^l`, saturating.
pub fn enumeration_states(vocab_len: usize, l_max: usize) -> u128 {
    let v = vocab_len as u128;
    let mut total: u128 = 0;
    let mut term: u128 = 1;
    for _ in 0..=l_max {
        total = total.saturating_add(term);
        term = term.saturating_mul(v);
    }
    total
}

fn expand<P: Policy>(
    policy: &P,
    prefix: &mut Vec<TokenId>,
    logprob: f64,
    l_max: usize,
    out: &mut Enumeration,
) {
    let vocab = policy.vocab();
    let dist = policy.next_dist(prefix);
    for (i, &lp) in dist.log_probs.iter().enumerate() {
        let t = TokenId(i as u16);
        if t == vocab.bos() {
            continue;
        }
        let next = logprob + lp;
        if t == vocab.eos() {
            out.terminated
                .push((TokenSeq::terminated(prefix[1..].to_vec()), next));
        } else if prefix.len() + 1 == l_max {
            let mut body = prefix[1..].to_vec();
            body.push(t);
            out.truncated.push((TokenSeq::truncated(body), next));
        } else {
            prefix.push(t);
            expand(policy, prefix, next, l_max, out);
            prefix.pop();
        }
    }
}

/// Enumerates all outcomes of ancestral sampling with limit `l_max`.
///
/// First-token branches run in parallel and are concatenated in token order,
/// so the result is identical to a sequential depth-first walk.
pub fn enumerate_outcomes<P: Policy>(policy: &P, l_max: usize) -> Result<Enumeration, EbmError> {
    let vocab = policy.vocab();
    let needed = enumeration_states(vocab.len(), l_max);
    if needed > ENUMERATION_BUDGET {
        return Err(EbmError::BudgetExceeded { needed });
    }
    let mut all = Enumeration {
        terminated: Vec::new(),
        truncated: Vec::new(),
    };
    if l_max < 2 {
        return Ok(all);
    }
    let root = policy.next_dist(&[vocab.bos()]);
    let branches: Vec<Enumeration> = (0..vocab.len())
        .into_par_iter()
        .map(|i| {
            let t = TokenId(i as u16);
            let mut part = Enumeration {
                terminated: Vec::new(),
                truncated: Vec::new(),
            };
            let lp = root.log_probs[i];
            if t == vocab.bos() {
            } else if t == vocab.eos() {
                part.terminated.push((TokenSeq::terminated(vec![]), lp));
            } else if l_max == 2 {
                part.truncated.push((TokenSeq::truncated(vec![t]), lp));
            } else {
                expand(policy, &mut vec![vocab.bos(), t], lp, l_max, &mut part);
            }
            part
        })
        .collect();
    for b in branches {
        all.terminated.extend(b.terminated);
        all.truncated.extend(b.truncated);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub z: f64,
    pub mode: ZMode,
    pub samples: usize,
    pub std_err: f64,
}

impl PartitionEstimate {
    pub fn exact(z: f64) -> PartitionEstimate {
        PartitionEstimate {
            z,
            mode: ZMode::Exact,
            samples: 0,
            std_err: 0.0,
        }
    }
}

/// Running mean and standard error of importance weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightPool {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl WeightPool {
    pub fn push(&mut self, w: f64) {
        self.n += 1;
        self.sum += w;
        self.sum_sq += w * w;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn estimate(&self) -> PartitionEstimate {
        let n = self.n.max(1) as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        PartitionEstimate {
            z: mean,
            mode: ZMode::MonteCarlo,
            samples: self.n,
            std_err: (var / n).sqrt(),
        }
    }
}

/// The unnormalized target built from a frozen base policy and a scorer.
pub struct Ebm<'a, P, S: ?Sized> {
    a: &'a P,
    scorer: &'a S,
}

impl<P, S: ?Sized> Clone for Ebm<'_, P, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<P, S: ?Sized> Copy for Ebm<'_, P, S> {}

/// A normalized distribution over terminated sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactP {
    pub z: f64,
    /// `(x, p(x), log p(x))` for every x with `P(x) > 0`, in enumeration order.
    pub entries: Vec<(TokenSeq, f64, f64)>,
}

impl ExactP {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn prob(&self, seq: &TokenSeq) -> f64 {
        self.entries
            .iter()
            .find(|e| &e.0 == seq)
            .map_or(0.0, |e| e.1)
    }

    /// `sequence,probability` rows; the sequence is its surface form.
    pub fn to_csv(&self, vocab: &crate::lang::Vocab) -> String {
        let mut s = String::from("sequence,probability\n");
        for (seq, p, _) in &self.entries {
            writeln!(s, "{},{p:e}", vocab.detokenize(seq)).expect("string write");
        }
        s
    }

    /// Exact `D_KL(p ‖ π)`.
    pub fn kl_to<Q: Policy>(&self, pi: &Q) -> f64 {
        self.entries
            .iter()
            .map(|(seq, p, lp)| p * (lp - pi.outcome_logprob(seq)))
            .sum()
    }
}

impl<'a, P: Policy, S: Scorer + ?Sized> Ebm<'a, P, S> {
    pub fn new(a: &'a P, scorer: &'a S) -> Ebm<'a, P, S> {
        Ebm { a, scorer }
    }

    pub fn base(&self) -> &'a P {
        self.a
    }

    pub fn scorer(&self) -> &'a S {
        self.scorer
    }

    /// `log P(x)`, or `-inf` when `b(x) = 0`.
    pub fn log_score(&self, seq: &TokenSeq) -> f64 {
        if seq.is_terminated() && self.scorer.accepts(seq) {
            self.a.outcome_logprob(seq)
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn score(&self, seq: &TokenSeq) -> f64 {
        let ls = self.log_score(seq);
        if ls == f64::NEG_INFINITY {
            0.0
        } else {
            ls.exp()
        }
    }

    /// Importance weight `P(x) / q(x)` for `x` drawn from `q`, computed in log space.
    pub fn weight<Q: Policy>(&self, q: &Q, seq: &TokenSeq) -> f64 {
        let ls = self.log_score(seq);
        if ls == f64::NEG_INFINITY {
            0.0
        } else {
            (ls - q.outcome_logprob(seq)).exp()
        }
    }

    pub fn exact_z(&self, l_max: usize) -> Result<PartitionEstimate, EbmError> {
        let outcomes = enumerate_outcomes(self.a, l_max)?;
        Ok(PartitionEstimate::exact(self.z_from(&outcomes)))
    }

    fn z_from(&self, outcomes: &Enumeration) -> f64 {
        outcomes
            .terminated
            .iter()
            .filter(|(s, _)| self.scorer.accepts(s))
            .map(|(_, lp)| lp.exp())
            .sum()
    }

    /// Mean of `P(x)/q(x)` over `n` draws from `proposal`.
    pub fn estimate_z<Q: Policy>(
        &self,
        proposal: &Q,
        n: usize,
        l_max: usize,
        seed: u64,
    ) -> PartitionEstimate {
        let samples = sample_many(proposal, seed, n.max(1), l_max, &[]);
        let mut pool = WeightPool::default();
        for s in &samples {
            pool.push(self.weight(proposal, s));
        }
        pool.estimate()
    }

    pub fn exact_p(&self, l_max: usize) -> Result<ExactP, EbmError> {
        let outcomes = enumerate_outcomes(self.a, l_max)?;
        let z = self.z_from(&outcomes);
        if z <= 0.0 {
            return Err(EbmError::DegenerateZ);
        }
        let log_z = z.ln();
        let entries = outcomes
            .terminated
            .into_iter()
            .filter(|(s, lp)| *lp > f64::NEG_INFINITY && self.scorer.accepts(s))
            .map(|(s, lp)| {
                let lpn = lp - log_z;
                (s, lpn.exp(), lpn)
            })
            .collect();
        Ok(ExactP { z, entries })
    }

    /// Rejection sampling from `a` on `b`; accepted draws are distributed as `p`.
    pub fn filter_sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        l_max: usize,
        budget: usize,
    ) -> Result<TokenSeq, EbmError> {
        for _ in 0..budget {
            let x = sample(self.a, rng, l_max, &[]);
            if x.is_terminated() && self.scorer.accepts(&x) {
                return Ok(x);
            }
        }
        Err(EbmError::BudgetExhausted(budget))
    }
}
