//! Maximum-likelihood pretraining of the base model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{weighted_grad_sum, Adam, AdamConfig, Policy, PolicyError};
use crate::lang::TokenSeq;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            lr: 5e-4,
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean negative log-likelihood per sequence over each epoch's batches,
    /// measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Minimizes mean negative log-likelihood over `train` with Adam, starting from `init`.
pub fn train_base<P: Policy>(
    init: P,
    train: &[TokenSeq],
    config: &MleConfig,
) -> Result<(P, TrainLog), PolicyError> {
    if config.lr.is_nan() || config.lr <= 0.0 || config.batch_size == 0 {
        return Err(PolicyError::InvalidConfig(
            "learning rate must be positive and batch size at least 1".into(),
        ));
    }
    if train.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if train.iter().any(|s| !s.is_terminated()) {
        return Err(PolicyError::MissingEos);
    }
    let mut policy = init;
    let mut opt = Adam::new(policy.num_params(), config.adam);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut substream(config.seed, epoch as u64));
        let mut total_nll = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = -1.0 / batch.len() as f64;
            let items: Vec<(&TokenSeq, f64)> = batch.iter().map(|&i| (&train[i], scale)).collect();
            let grad = weighted_grad_sum(&policy, &items);
            let nll: f64 = batch
                .iter()
                .map(|&i| -policy.logprob(&train[i]).expect("terminated"))
                .sum();
            if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PolicyError::NonFiniteLoss { epoch });
            }
            total_nll += nll;
            // `grad` is the gradient of mean log-likelihood times -1, i.e. of the loss
            opt.descend(policy.params_mut(), &grad, config.lr);
        }
        log.epoch_losses.push(total_nll / train.len() as f64);
    }
    Ok((policy, log))
}

/// `exp(-Σ log π(x) / N)`, with N counting every predicted token (EOS included).
pub fn perplexity_of<P: Policy>(policy: &P, seqs: &[TokenSeq]) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for s in seqs {
        total += policy.logprob(s)?;
        tokens += s.body().len() + 1;
    }
    Ok((-total / tokens as f64).exp())
}
