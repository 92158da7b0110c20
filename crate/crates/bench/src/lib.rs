//! Shared inputs for the benchmarks: a fixed corpus and a trained-looking policy.

use kldpg_core::corpus::{build_dataset, GenConfig};
use kldpg_core::policy::MlpConfig;
use kldpg_core::{MlpPolicy, TokenSeq, Vocab};

/// `n` generated programs under the default corpus settings.
pub fn programs(n: usize) -> Vec<TokenSeq> {
    let vocab = Vocab::minilang();
    build_dataset(&GenConfig::default(), &vocab, n, 1)
        .expect("default corpus config is valid")
        .train
}

pub fn policy() -> MlpPolicy {
    MlpPolicy::new(Vocab::minilang(), MlpConfig::default(), 0)
}
