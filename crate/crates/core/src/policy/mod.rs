//! Autoregressive policies over [`TokenSeq`]: next-token distributions,
//! sequence log-probabilities, ancestral sampling, and exact gradients.
//!
//! Parameters live in one flat `f64` vector per policy, so gradients, optimizer
//! state, and finite-difference checks all share a single layout.

mod adam;
mod checkpoint;
mod mlp;
mod tabular;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError,
    FORMAT_VERSION,
};
pub use mlp::{MlpConfig, MlpPolicy};
pub use tabular::TabularPolicy;
pub use train::{perplexity_of, train_base, MleConfig, TrainLog};

use rand::Rng;
use rayon::prelude::*;

use crate::lang::{TokenId, TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("sequence has no EOS")]
    MissingEos,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has no training sequences")]
    EmptyDataset,
}

/// A next-token distribution. BOS always has probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NextDist {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl NextDist {
    /// Softmax over `logits` with `masked` excluded.
    pub fn from_logits(logits: &[f64], masked: TokenId) -> NextDist {
        let m = masked.index();
        let max = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| if i == m { 0.0 } else { (l - max).exp() })
            .collect();
        let total: f64 = probs.iter().sum();
        let log_total = total.ln();
        let log_probs = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if i == m {
                    f64::NEG_INFINITY
                } else {
                    l - max - log_total
                }
            })
            .collect();
        for p in &mut probs {
            *p /= total;
        }
        NextDist { probs, log_probs }
    }

    /// Inverse-CDF draw from one uniform variate.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return TokenId(i as u16);
                }
            }
        }
        TokenId(last as u16)
    }
}

/// The shared contract of every autoregressive model used as a, π_θ or q.
pub trait Policy: Clone + Send + Sync {
    fn vocab(&self) -> &Vocab;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Distribution of the token following `prefix`, which starts with BOS.
    fn next_dist(&self, prefix: &[TokenId]) -> NextDist;

    /// Adds `scale * ∇_θ log π(ids[1..] | BOS)` into `grad` and returns the
    /// log-probability. `ids` is a full id sequence starting with BOS.
    fn accumulate_grad(&self, ids: &[TokenId], scale: f64, grad: &mut [f64]) -> f64;

    /// Natural-log probability of every token after BOS in `ids`.
    fn ids_logprob(&self, ids: &[TokenId]) -> f64 {
        (1..ids.len())
            .map(|t| self.next_dist(&ids[..t]).log_probs[ids[t].index()])
            .sum()
    }

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// log π(x) for an EOS-terminated sequence.
    fn logprob(&self, seq: &TokenSeq) -> Result<f64, PolicyError> {
        if !seq.is_terminated() {
            return Err(PolicyError::MissingEos);
        }
        Ok(self.ids_logprob(&seq.ids(self.vocab())))
    }

    /// Log-probability of the sampling outcome `seq`: for a truncated sequence
    /// this is the probability of drawing its body and then hitting the limit.
    fn outcome_logprob(&self, seq: &TokenSeq) -> f64 {
        self.ids_logprob(&seq.ids(self.vocab()))
    }

    /// Exact gradient of [`Policy::logprob`], in the parameter layout.
    fn grad_logprob(&self, seq: &TokenSeq) -> Result<(f64, Vec<f64>), PolicyError> {
        if !seq.is_terminated() {
            return Err(PolicyError::MissingEos);
        }
        let mut grad = vec![0.0; self.num_params()];
        let lp = self.accumulate_grad(&seq.ids(self.vocab()), 1.0, &mut grad);
        Ok((lp, grad))
    }
}

/// Ancestral sampling at temperature 1, continuing after BOS and `prompt`.
/// Stops at EOS or when the sequence reaches `l_max` tokens.
pub fn sample<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    rng: &mut R,
    l_max: usize,
    prompt: &[TokenId],
) -> TokenSeq {
    let vocab = policy.vocab();
    let mut ids = Vec::with_capacity(l_max);
    ids.push(vocab.bos());
    ids.extend_from_slice(prompt);
    while ids.len() < l_max {
        let t = policy.next_dist(&ids).draw(rng);
        if t == vocab.eos() {
            ids.remove(0);
            return TokenSeq::terminated(ids);
        }
        ids.push(t);
    }
    ids.remove(0);
    TokenSeq::truncated(ids)
}

/// Draws `n` samples, item `i` from substream `i` of `seed`, in parallel.
pub fn sample_many<P: Policy>(
    policy: &P,
    seed: u64,
    n: usize,
    l_max: usize,
    prompt: &[TokenId],
) -> Vec<TokenSeq> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::substream(seed, i as u64);
            sample(policy, &mut rng, l_max, prompt)
        })
        .collect()
}

const GRAD_CHUNK: usize = 8;

/// `Σ_i w_i ∇ log π(x_i)`, skipping zero weights. A truncated sequence
/// contributes the gradient of its outcome log-probability.
///
/// Chunks are accumulated in parallel but combined in index order, so the
/// result does not depend on the thread count.
pub fn weighted_grad_sum<P: Policy>(policy: &P, items: &[(&TokenSeq, f64)]) -> Vec<f64> {
    let n = policy.num_params();
    let vocab = policy.vocab();
    let partials: Vec<Vec<f64>> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            for &(seq, w) in chunk {
                if w != 0.0 {
                    policy.accumulate_grad(&seq.ids(vocab), w, &mut g);
                }
            }
            g
        })
        .collect();
    let mut total = vec![0.0; n];
    for g in partials {
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
    }
    total
}

/// Either concrete policy, for code that picks the architecture at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Mlp(MlpPolicy),
    Tabular(TabularPolicy),
}

impl Policy for AnyPolicy {
    fn vocab(&self) -> &Vocab {
        match self {
            AnyPolicy::Mlp(p) => p.vocab(),
            AnyPolicy::Tabular(p) => p.vocab(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            AnyPolicy::Mlp(p) => p.params(),
            AnyPolicy::Tabular(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyPolicy::Mlp(p) => p.params_mut(),
            AnyPolicy::Tabular(p) => p.params_mut(),
        }
    }

    fn next_dist(&self, prefix: &[TokenId]) -> NextDist {
        match self {
            AnyPolicy::Mlp(p) => p.next_dist(prefix),
            AnyPolicy::Tabular(p) => p.next_dist(prefix),
        }
    }

    fn accumulate_grad(&self, ids: &[TokenId], scale: f64, grad: &mut [f64]) -> f64 {
        match self {
            AnyPolicy::Mlp(p) => p.accumulate_grad(ids, scale, grad),
            AnyPolicy::Tabular(p) => p.accumulate_grad(ids, scale, grad),
        }
    }

    fn ids_logprob(&self, ids: &[TokenId]) -> f64 {
        match self {
            AnyPolicy::Mlp(p) => p.ids_logprob(ids),
            AnyPolicy::Tabular(p) => p.ids_logprob(ids),
        }
    }
}
