//! Tabular k-gram policy: one free logit per (context, next token).

use rand::Rng;

use super::{NextDist, Policy};
use crate::lang::{TokenId, Vocab};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab: Vocab,
    /// k-gram order; the context is the previous `k - 1` tokens.
    k: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits: uniform over non-BOS tokens in every context.
    pub fn uniform(vocab: Vocab, k: usize) -> TabularPolicy {
        assert!(k >= 2, "tabular order must be at least 2");
        let rows = vocab.len().pow((k - 1) as u32);
        let cols = vocab.len();
        TabularPolicy {
            vocab,
            k,
            logits: vec![0.0; rows * cols],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale)`.
    pub fn random(vocab: Vocab, k: usize, scale: f64, seed: u64) -> TabularPolicy {
        let mut p = TabularPolicy::uniform(vocab, k);
        let mut rng = seeded(seed);
        for x in &mut p.logits {
            *x = rng.gen_range(-scale..scale);
        }
        p
    }

    pub fn from_params(vocab: Vocab, k: usize, logits: Vec<f64>) -> Option<TabularPolicy> {
        if k < 2 {
            return None;
        }
        let expect = vocab.len().pow(k as u32);
        (logits.len() == expect).then_some(TabularPolicy { vocab, k, logits })
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.vocab.len().pow((self.k - 1) as u32)
    }

    /// Row index of the context formed by the last `k - 1` ids of `prefix`.
    pub fn context_row(&self, prefix: &[TokenId]) -> usize {
        let n = self.k - 1;
        let v = self.vocab.len();
        let pad = n.saturating_sub(prefix.len());
        let tail = &prefix[prefix.len().saturating_sub(n)..];
        std::iter::repeat_n(self.vocab.bos(), pad)
            .chain(tail.iter().copied())
            .fold(0, |row, t| row * v + t.index())
    }

    /// Parameter index of the logit for `next` after the context of `prefix`.
    pub fn logit_index(&self, prefix: &[TokenId], next: TokenId) -> usize {
        self.context_row(prefix) * self.vocab.len() + next.index()
    }

    pub fn set_logit(&mut self, prefix: &[TokenId], next: TokenId, value: f64) {
        let i = self.logit_index(prefix, next);
        self.logits[i] = value;
    }

    /// Sets the row for the context of `prefix` to `ln(probs)` (zero probability
    /// becomes a large negative logit).
    pub fn set_row_probs(&mut self, prefix: &[TokenId], probs: &[f64]) {
        let v = self.vocab.len();
        let row = self.context_row(prefix) * v;
        for (i, &p) in probs.iter().enumerate() {
            self.logits[row + i] = if p > 0.0 { p.ln() } else { -1e4 };
        }
    }
}

impl Policy for TabularPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn next_dist(&self, prefix: &[TokenId]) -> NextDist {
        let v = self.vocab.len();
        let row = self.context_row(prefix) * v;
        NextDist::from_logits(&self.logits[row..row + v], self.vocab.bos())
    }

    fn accumulate_grad(&self, ids: &[TokenId], scale: f64, grad: &mut [f64]) -> f64 {
        let v = self.vocab.len();
        let bos = self.vocab.bos().index();
        let mut logprob = 0.0;
        for t in 1..ids.len() {
            let row = self.context_row(&ids[..t]) * v;
            let dist = NextDist::from_logits(&self.logits[row..row + v], self.vocab.bos());
            let y = ids[t].index();
            logprob += dist.log_probs[y];
            for i in 0..v {
                if i != bos {
                    let indicator = if i == y { 1.0 } else { 0.0 };
                    grad[row + i] += scale * (indicator - dist.probs[i]);
                }
            }
        }
        logprob
    }
}
