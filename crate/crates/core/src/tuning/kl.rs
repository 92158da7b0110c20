//! KL estimators for the proposal swap test and the evaluation suite.

use serde::{Deserialize, Serialize};

use super::TuneError;
use crate::ebm::{enumerate_outcomes, Ebm, EbmError, PartitionEstimate, WeightPool};
use crate::lang::{Scorer, TokenSeq};
use crate::policy::{sample_many, Policy};

/// A Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

fn mean_and_se(xs: &[f64]) -> KlEstimate {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
    let se = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    KlEstimate {
        value: mean,
        std_err: se,
        samples: n,
    }
}

/// `D_KL(p ‖ π)` from a batch drawn from `q`, with `Ẑ` supplied.
///
/// The estimate is `(1/Ẑ) · mean[(P/q)(log P − log π)] − log Ẑ`; members
/// with `P(x) = 0` contribute nothing.
pub fn forward_kl_from_batch<P, S, Pi, Q>(
    ebm: &Ebm<'_, P, S>,
    z: &PartitionEstimate,
    pi: &Pi,
    q: &Q,
    batch: &[TokenSeq],
) -> Result<f64, TuneError>
where
    P: Policy,
    S: Scorer + ?Sized,
    Pi: Policy,
    Q: Policy,
{
    if batch.is_empty() {
        return Err(TuneError::InvalidConfig("empty KL batch".into()));
    }
    if z.z.is_nan() || z.z <= 0.0 {
        return Err(EbmError::DegenerateZ.into());
    }
    let mut sum = 0.0;
    for x in batch {
        let log_p = ebm.log_score(x);
        if log_p == f64::NEG_INFINITY {
            continue;
        }
        let w = (log_p - q.outcome_logprob(x)).exp();
        sum += w * (log_p - pi.outcome_logprob(x));
    }
    Ok(sum / batch.len() as f64 / z.z - z.z.ln())
}

/// Importance-sampled `D_KL(p ‖ π)` from `n` fresh draws of `q`.
#[allow(clippy::too_many_arguments)]
pub fn is_forward_kl<P, S, Pi, Q>(
    ebm: &Ebm<'_, P, S>,
    z: &PartitionEstimate,
    pi: &Pi,
    q: &Q,
    n: usize,
    l_max: usize,
    seed: u64,
) -> Result<f64, TuneError>
where
    P: Policy,
    S: Scorer + ?Sized,
    Pi: Policy,
    Q: Policy,
{
    if n == 0 {
        return Err(TuneError::InvalidConfig("n must be at least 1".into()));
    }
    let batch = sample_many(q, seed, n, l_max, &[]);
    forward_kl_from_batch(ebm, z, pi, q, &batch)
}

/// Pools the importance weights of `batch` into `pool`.
pub fn pool_weights<P, S, Q>(ebm: &Ebm<'_, P, S>, q: &Q, batch: &[TokenSeq], pool: &mut WeightPool)
where
    P: Policy,
    S: Scorer + ?Sized,
    Q: Policy,
{
    for x in batch {
        pool.push(ebm.weight(q, x));
    }
}

/// `D_KL(π ‖ a)` as the mean of `log π − log a` over samples drawn from `π`.
pub fn reverse_kl_on<Pi: Policy, A: Policy>(pi: &Pi, a: &A, samples: &[TokenSeq]) -> KlEstimate {
    let terms: Vec<f64> = samples
        .iter()
        .map(|x| pi.outcome_logprob(x) - a.outcome_logprob(x))
        .collect();
    mean_and_se(&terms)
}

pub fn reverse_kl<Pi: Policy, A: Policy>(
    pi: &Pi,
    a: &A,
    n: usize,
    l_max: usize,
    seed: u64,
) -> KlEstimate {
    let samples = sample_many(pi, seed, n.max(1), l_max, &[]);
    reverse_kl_on(pi, a, &samples)
}

/// Exact `D_KL(π ‖ a)` over every sampling outcome of `π`, truncations included.
pub fn exact_reverse_kl<Pi: Policy, A: Policy>(
    pi: &Pi,
    a: &A,
    l_max: usize,
) -> Result<f64, EbmError> {
    let outcomes = enumerate_outcomes(pi, l_max)?;
    Ok(outcomes
        .outcomes()
        .filter(|(_, lp)| *lp > f64::NEG_INFINITY)
        .map(|(x, lp)| lp.exp() * (lp - a.outcome_logprob(x)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Vocab;
    use crate::policy::TabularPolicy;
    use crate::tiny::TinyConfig;

    #[test]
    fn two_sequence_closed_form() {
        // p is uniform over {"x", "1"}; π puts 0.75 and 0.25 on them.
        let v = Vocab::with_surfaces(&["x", "1"]).unwrap();
        let x = v.id("x").unwrap();
        let one = v.id("1").unwrap();
        let mut a = TabularPolicy::uniform(v.clone(), 2);
        let mut probs = vec![0.0; v.len()];
        probs[x.index()] = 0.5;
        probs[one.index()] = 0.5;
        a.set_row_probs(&[v.bos()], &probs);
        for t in [x, one] {
            let mut eos = vec![0.0; v.len()];
            eos[v.eos().index()] = 1.0;
            a.set_row_probs(&[v.bos(), t], &eos);
        }
        let mut pi = a.clone();
        probs[x.index()] = 0.75;
        probs[one.index()] = 0.25;
        pi.set_row_probs(&[v.bos()], &probs);

        let always = |_: &TokenSeq| true;
        let ebm = Ebm::new(&a, &always);
        let z = PartitionEstimate::exact(1.0);
        let batch = [
            TokenSeq::terminated(vec![x]),
            TokenSeq::terminated(vec![one]),
        ];
        let kl = forward_kl_from_batch(&ebm, &z, &pi, &a, &batch).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((kl - expected).abs() < 1e-9);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn self_divergence_is_zero() {
        let tiny = TinyConfig::new();
        let ebm = Ebm::new(&tiny.a, &tiny.scorer);
        let exact = ebm.exact_p(tiny.l_max).unwrap();
        assert!(
            exact_reverse_kl(&tiny.a, &tiny.a, tiny.l_max)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert!(exact.kl_to(&tiny.a) > 0.0);
        let est = reverse_kl(&tiny.a, &tiny.a, 2000, tiny.l_max, 3);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn degenerate_z_is_rejected() {
        let tiny = TinyConfig::new();
        let ebm = Ebm::new(&tiny.a, &tiny.scorer);
        let z = PartitionEstimate::exact(0.0);
        let err = is_forward_kl(&ebm, &z, &tiny.a, &tiny.a, 10, tiny.l_max, 1).unwrap_err();
        assert!(matches!(err, TuneError::Ebm(EbmError::DegenerateZ)));
    }
}
