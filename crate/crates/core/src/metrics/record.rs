use serde::{Deserialize, Serialize};

use super::{
    compilability_rate, distinct1, error_histogram, lint_rate, mean_ast_nodes, mean_char_length,
    self_bleu5, token_rank_frequency, ErrorHistogram, RankCount,
};
use crate::ebm::{Ebm, ExactP, PartitionEstimate};
use crate::lang::{ErrorKind, Scorer, TokenSeq};
use crate::policy::{perplexity_of, sample_many, Policy};
use crate::tuning::{forward_kl_from_batch, reverse_kl_on};

/// One evaluation snapshot. Metrics that could not be computed are `None`
/// and explained in `absent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub samples: usize,
    pub compilability_rate: f64,
    pub forward_kl: Option<f64>,
    pub reverse_kl: f64,
    pub reverse_kl_std_err: f64,
    pub distinct1: Option<f64>,
    pub distinct1_skipped: usize,
    pub self_bleu5: Option<f64>,
    pub perplexity: Option<f64>,
    pub mean_char_length: f64,
    pub mean_ast_nodes: Option<f64>,
    pub lint_rate: f64,
    pub lint_rate_per_token: f64,
    pub error_histogram: ErrorHistogram,
    pub rank_frequency: Vec<RankCount>,
    pub absent: Vec<(String, String)>,
}

/// Column order of [`MetricsRecord::csv_row`].
pub const CSV_HEADER: &str =
    "compilability_rate,forward_kl,reverse_kl,distinct1,self_bleu5,perplexity,\
mean_char_length,mean_ast_nodes,lint_rate,lint_rate_per_token,\
err_empty,err_unexpected_token,err_unbalanced_paren,err_missing_semicolon,err_truncated";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsRecord {
    /// Metric names paired with values, in header order.
    pub fn columns(&self) -> Vec<(&'static str, Option<f64>)> {
        let mut cols = vec![
            ("compilability_rate", Some(self.compilability_rate)),
            ("forward_kl", self.forward_kl),
            ("reverse_kl", Some(self.reverse_kl)),
            ("distinct1", self.distinct1),
            ("self_bleu5", self.self_bleu5),
            ("perplexity", self.perplexity),
            ("mean_char_length", Some(self.mean_char_length)),
            ("mean_ast_nodes", self.mean_ast_nodes),
            ("lint_rate", Some(self.lint_rate)),
            ("lint_rate_per_token", Some(self.lint_rate_per_token)),
        ];
        let names = [
            "err_empty",
            "err_unexpected_token",
            "err_unbalanced_paren",
            "err_missing_semicolon",
            "err_truncated",
        ];
        for (name, kind) in names.into_iter().zip(ErrorKind::ALL) {
            cols.push((name, Some(self.error_histogram.get(kind))));
        }
        cols
    }

    /// Comma-separated values matching [`CSV_HEADER`]; absent metrics are empty cells.
    pub fn csv_row(&self) -> String {
        self.columns()
            .into_iter()
            .map(|(_, v)| cell(v))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn rank_frequency_csv(&self) -> String {
        let mut s = String::from("rank,token,count\n");
        for r in &self.rank_frequency {
            s.push_str(&format!("{},{},{}\n", r.rank, r.token.0, r.count));
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("error_kind,frequency\n");
        for k in ErrorKind::ALL {
            s.push_str(&format!("{k},{}\n", self.error_histogram.get(k)));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_samples: usize,
    pub l_max: usize,
    pub seed: u64,
}

/// How the forward KL column is filled.
pub enum ForwardKl<'a, Q> {
    Skip,
    /// A value computed elsewhere, e.g. by the swap test.
    Given(f64),
    Exact(&'a ExactP),
    /// Importance sampling from `q`; `z` defaults to the estimate from the same batch.
    Proposal {
        q: &'a Q,
        n: usize,
        z: Option<PartitionEstimate>,
    },
}

/// Samples from `pi` and fills every field of a [`MetricsRecord`].
pub fn evaluate<Pi, A, S, Q>(
    pi: &Pi,
    ebm: &Ebm<'_, A, S>,
    test: &[TokenSeq],
    opts: &EvalOptions,
    forward: ForwardKl<'_, Q>,
) -> MetricsRecord
where
    Pi: Policy,
    A: Policy,
    S: Scorer + ?Sized,
    Q: Policy,
{
    let vocab = pi.vocab();
    let scorer = ebm.scorer();
    let samples = sample_many(pi, opts.seed, opts.n_samples.max(1), opts.l_max, &[]);
    let mut absent = Vec::new();
    let mut note = |field: &str, reason: String| absent.push((field.to_string(), reason));

    let forward_kl = match forward {
        ForwardKl::Skip => {
            note("forward_kl", "not requested".into());
            None
        }
        ForwardKl::Given(v) => Some(v),
        ForwardKl::Exact(p) => Some(p.kl_to(pi)),
        ForwardKl::Proposal { q, n, z } => {
            let batch = sample_many(
                q,
                crate::rng::derive_seed(opts.seed, "forward-kl"),
                n.max(1),
                opts.l_max,
                &[],
            );
            let z = z.unwrap_or_else(|| {
                let mut pool = crate::ebm::WeightPool::default();
                crate::tuning::pool_weights(ebm, q, &batch, &mut pool);
                pool.estimate()
            });
            match forward_kl_from_batch(ebm, &z, pi, q, &batch) {
                Ok(v) => Some(v),
                Err(e) => {
                    note("forward_kl", e.to_string());
                    None
                }
            }
        }
    };

    let rev = reverse_kl_on(pi, ebm.base(), &samples);
    let (distinct, skipped) = match distinct1(&samples) {
        Ok(d) => (Some(d.value), d.skipped),
        Err(e) => {
            note("distinct1", e.to_string());
            (None, samples.len())
        }
    };
    let self_bleu = self_bleu5(&samples)
        .map_err(|e| note("self_bleu5", e.to_string()))
        .ok();
    let perplexity = if test.is_empty() {
        note("perplexity", "empty test split".into());
        None
    } else {
        perplexity_of(pi, test)
            .map_err(|e| note("perplexity", e.to_string()))
            .ok()
    };
    let ast = mean_ast_nodes(&samples, vocab)
        .map_err(|e| note("mean_ast_nodes", e.to_string()))
        .ok();
    let lint = lint_rate(&samples, vocab);

    MetricsRecord {
        samples: samples.len(),
        compilability_rate: compilability_rate(&samples, scorer),
        forward_kl,
        reverse_kl: rev.value,
        reverse_kl_std_err: rev.std_err,
        distinct1: distinct,
        distinct1_skipped: skipped,
        self_bleu5: self_bleu,
        perplexity,
        mean_char_length: mean_char_length(&samples, vocab),
        mean_ast_nodes: ast,
        lint_rate: lint.per_char,
        lint_rate_per_token: lint.per_token,
        error_histogram: error_histogram(&samples, scorer),
        rank_frequency: token_rank_frequency(&samples),
        absent,
    }
}
