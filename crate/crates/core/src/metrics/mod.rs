//! Evaluation suite: compilability, KL divergences, diversity, perplexity,
//! length, AST size, lint rate, error histogram, token rank-frequency.
//!
//! BOS and EOS are excluded from every diversity, length, and frequency metric.

mod bleu;
mod record;

pub use bleu::self_bleu;
pub use record::{evaluate, EvalOptions, ForwardKl, MetricsRecord, CSV_HEADER};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::lang::{lint, parse, ErrorKind, Scorer, TokenId, TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("every sample has an empty body")]
    AllSamplesEmpty,
    #[error("need at least two samples")]
    TooFewSamples,
    #[error("no sample compiles")]
    NoCompilableSamples,
    #[error("empty sample set")]
    Empty,
}

/// Samples drawn from one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<TokenSeq>,
    pub seed: u64,
    pub tag: String,
}

pub fn compilability_rate<S: Scorer + ?Sized>(samples: &[TokenSeq], scorer: &S) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| scorer.accepts(s)).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distinct1 {
    pub value: f64,
    /// Samples with an empty body, left out of the average.
    pub skipped: usize,
}

/// Per-sample ratio of distinct to total body tokens, averaged over samples.
pub fn distinct1(samples: &[TokenSeq]) -> Result<Distinct1, MetricsError> {
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut seen = Vec::new();
    for s in samples {
        let body = s.body();
        if body.is_empty() {
            continue;
        }
        seen.clear();
        seen.extend_from_slice(body);
        seen.sort_unstable();
        seen.dedup();
        sum += seen.len() as f64 / body.len() as f64;
        scored += 1;
    }
    if scored == 0 {
        return Err(MetricsError::AllSamplesEmpty);
    }
    Ok(Distinct1 {
        value: sum / scored as f64,
        skipped: samples.len() - scored,
    })
}

pub fn self_bleu5(samples: &[TokenSeq]) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    self_bleu(samples, 5).ok_or(MetricsError::AllSamplesEmpty)
}

pub fn mean_char_length(samples: &[TokenSeq], vocab: &Vocab) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: usize = samples
        .iter()
        .map(|s| vocab.detokenize(s).chars().count())
        .sum();
    total as f64 / samples.len() as f64
}

/// Mean AST node count over the samples that compile.
pub fn mean_ast_nodes(samples: &[TokenSeq], vocab: &Vocab) -> Result<f64, MetricsError> {
    let counts: Vec<usize> = samples
        .iter()
        .filter_map(|s| parse(vocab, s).ok())
        .map(|ast| ast.node_count())
        .collect();
    if counts.is_empty() {
        return Err(MetricsError::NoCompilableSamples);
    }
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LintRates {
    pub violations: usize,
    pub characters: usize,
    pub tokens: usize,
    pub per_char: f64,
    pub per_token: f64,
}

pub fn lint_rate(samples: &[TokenSeq], vocab: &Vocab) -> LintRates {
    let mut violations = 0;
    let mut characters = 0;
    let mut tokens = 0;
    for s in samples {
        let report = lint(vocab, s);
        violations += report.violations.len();
        tokens += report.tokens_scanned;
        characters += vocab.detokenize(s).chars().count();
    }
    let ratio = |d: usize| {
        if d == 0 {
            0.0
        } else {
            violations as f64 / d as f64
        }
    };
    LintRates {
        violations,
        characters,
        tokens,
        per_char: ratio(characters),
        per_token: ratio(tokens),
    }
}

/// Fraction of all samples failing with each error kind, indexed by [`ErrorKind::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram(pub [f64; 5]);

impl ErrorHistogram {
    pub fn get(&self, kind: ErrorKind) -> f64 {
        self.0[kind.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn to_map(&self) -> HashMap<ErrorKind, f64> {
        ErrorKind::ALL.iter().map(|&k| (k, self.get(k))).collect()
    }
}

pub fn error_histogram<S: Scorer + ?Sized>(samples: &[TokenSeq], scorer: &S) -> ErrorHistogram {
    let mut counts = [0usize; 5];
    for s in samples {
        if let Some(kind) = scorer.check(s).error_kind() {
            counts[kind.index()] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    ErrorHistogram(counts.map(|c| c as f64 / n))
}

/// Mean and normal-approximation 95% half-width of per-kind frequencies over
/// repeated sample sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub repeats: usize,
    pub mean: [f64; 5],
    pub half_width: [f64; 5],
    pub total_mean: f64,
    pub total_half_width: f64,
}

pub fn summarize_histograms(histograms: &[ErrorHistogram]) -> HistogramSummary {
    let r = histograms.len();
    let stats = |xs: &[f64]| -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return (mean, 0.0);
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, 1.96 * (var / n).sqrt())
    };
    let mut mean = [0.0; 5];
    let mut half_width = [0.0; 5];
    for k in 0..5 {
        let xs: Vec<f64> = histograms.iter().map(|h| h.0[k]).collect();
        (mean[k], half_width[k]) = stats(&xs);
    }
    let totals: Vec<f64> = histograms.iter().map(ErrorHistogram::total).collect();
    let (total_mean, total_half_width) = stats(&totals);
    HistogramSummary {
        repeats: r,
        mean,
        half_width,
        total_mean,
        total_half_width,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCount {
    pub rank: usize,
    pub token: TokenId,
    pub count: usize,
}

/// Body-token counts sorted by descending count, ties by ascending id, ranked from 1.
pub fn token_rank_frequency(samples: &[TokenSeq]) -> Vec<RankCount> {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for s in samples {
        for &t in s.body() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut v: Vec<(TokenId, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (token, count))| RankCount {
            rank: i + 1,
            token,
            count,
        })
        .collect()
}
