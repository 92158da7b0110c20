//! Self-BLEU: each sample scored by BLEU against all other samples.

use rayon::prelude::*;
use std::collections::HashMap;

use crate::lang::{TokenId, TokenSeq};

fn key(gram: &[TokenId]) -> u128 {
    gram.iter().fold(0u128, |k, t| (k << 16) | u128::from(t.0))
}

fn counts(body: &[TokenId], n: usize) -> HashMap<u128, u32> {
    let mut m = HashMap::new();
    if body.len() >= n {
        for w in body.windows(n) {
            *m.entry(key(w)).or_insert(0) += 1;
        }
    }
    m
}

/// Mean BLEU of each nonempty sample against all the others, with
/// modified n-gram precisions up to `min(max_n, length)`, no smoothing, and
/// the closest-length brevity penalty. `None` when fewer than two samples or
/// no nonempty sample.
pub fn self_bleu(samples: &[TokenSeq], max_n: usize) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let bodies: Vec<&[TokenId]> = samples.iter().map(|s| s.body()).collect();

    // per order: per-sample counts, and for each n-gram the two largest
    // per-sample counts, so the max over "all samples but me" is O(1)
    let per_sample: Vec<Vec<HashMap<u128, u32>>> = (1..=max_n)
        .map(|n| bodies.par_iter().map(|b| counts(b, n)).collect())
        .collect();
    let top2: Vec<HashMap<u128, [(u32, usize); 2]>> = per_sample
        .iter()
        .map(|maps| {
            let mut best: HashMap<u128, [(u32, usize); 2]> = HashMap::new();
            for (i, m) in maps.iter().enumerate() {
                for (&g, &c) in m {
                    let e = best.entry(g).or_insert([(0, usize::MAX); 2]);
                    if c > e[0].0 {
                        e[1] = e[0];
                        e[0] = (c, i);
                    } else if c > e[1].0 {
                        e[1] = (c, i);
                    }
                }
            }
            best
        })
        .collect();
    let lengths: Vec<usize> = bodies.iter().map(|b| b.len()).collect();

    let scores: Vec<Option<f64>> = (0..bodies.len())
        .into_par_iter()
        .map(|h| {
            let len = lengths[h];
            if len == 0 {
                return None;
            }
            let orders = max_n.min(len);
            let mut log_sum = 0.0;
            for n in 1..=orders {
                let mine = &per_sample[n - 1][h];
                let total = (len + 1 - n) as f64;
                let mut clipped = 0u32;
                for (g, &c) in mine {
                    let [first, second] = top2[n - 1][g];
                    let other = if first.1 == h { second.0 } else { first.0 };
                    clipped += c.min(other);
                }
                if clipped == 0 {
                    return Some(0.0);
                }
                log_sum += (f64::from(clipped) / total).ln();
            }
            let closest = lengths
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != h)
                .map(|(_, &r)| r)
                .min_by_key(|&r| (r.abs_diff(len), r))
                .expect("at least two samples");
            let bp = if len > closest {
                1.0
            } else {
                (1.0 - closest as f64 / len as f64).exp()
            };
            Some(bp * (log_sum / orders as f64).exp())
        })
        .collect();

    let scored: Vec<f64> = scores.into_iter().flatten().collect();
    if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    }
}
