//! A configuration small enough for exact enumeration: the 6-token vocabulary
//! `{<bos>, <eos>, x, 1, =, ;}`, `L_max = 6`, and a hand-set bigram base model.

use std::collections::BTreeMap;

use crate::ebm::ExactP;
use crate::lang::{MiniLang, TokenId, Vocab};
use crate::policy::TabularPolicy;

pub const TINY_L_MAX: usize = 6;

pub fn tiny_vocab() -> Vocab {
    Vocab::with_surfaces(&["x", "1", "=", ";"]).expect("valid")
}

pub struct TinyConfig {
    pub vocab: Vocab,
    pub l_max: usize,
    pub a: TabularPolicy,
    pub scorer: MiniLang,
}

impl TinyConfig {
    /// Bigram rows, columns in id order `[bos, eos, x, 1, =, ;]`. Under
    /// `L_max = 6` only `x = x ;` and `x = 1 ;` compile.
    pub fn new() -> TinyConfig {
        let vocab = tiny_vocab();
        let id = |s: &str| vocab.id(s).expect("tiny token");
        let mut a = TabularPolicy::uniform(vocab.clone(), 2);
        let rows: [(crate::lang::TokenId, [f64; 6]); 6] = [
            (vocab.bos(), [0.0, 0.04, 0.88, 0.04, 0.02, 0.02]),
            (id("x"), [0.0, 0.05, 0.03, 0.02, 0.80, 0.10]),
            (id("1"), [0.0, 0.05, 0.03, 0.02, 0.05, 0.85]),
            (id("="), [0.0, 0.03, 0.30, 0.60, 0.03, 0.04]),
            (id(";"), [0.0, 0.85, 0.08, 0.03, 0.02, 0.02]),
            (vocab.eos(), [0.0, 0.2, 0.2, 0.2, 0.2, 0.2]),
        ];
        for (ctx, probs) in rows {
            a.set_row_probs(&[ctx], &probs);
        }
        TinyConfig {
            scorer: MiniLang::new(vocab.clone()),
            vocab,
            l_max: TINY_L_MAX,
            a,
        }
    }
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig::new()
    }
}

/// A full-context tabular policy whose sequence distribution is exactly `p`.
/// Contexts outside the support of `p` stay uniform.
pub fn materialize(p: &ExactP, vocab: &Vocab, l_max: usize) -> TabularPolicy {
    let mut policy = TabularPolicy::uniform(vocab.clone(), l_max.max(2));
    // prefix -> mass of each next token
    let mut tree: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    for (seq, prob, _) in &p.entries {
        let ids = seq.ids(vocab);
        for t in 1..ids.len() {
            let row = tree
                .entry(ids[..t].to_vec())
                .or_insert_with(|| vec![0.0; vocab.len()]);
            row[ids[t].index()] += prob;
        }
    }
    for (prefix, mass) in tree {
        let total: f64 = mass.iter().sum();
        let probs: Vec<f64> = mass.iter().map(|m| m / total).collect();
        policy.set_row_probs(&prefix, &probs);
    }
    policy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ebm::Ebm;

    #[test]
    fn partition_function_is_moderate() {
        let t = TinyConfig::new();
        let z = Ebm::new(&t.a, &t.scorer).exact_z(t.l_max).unwrap().z;
        // 0.88·0.80·(0.30·0.10 + 0.60·0.85)·0.85
        let hand = 0.88 * 0.80 * (0.30 * 0.10 + 0.60 * 0.85) * 0.85;
        assert!((z - hand).abs() < 1e-12, "{z} vs {hand}");
    }
}
