//! Toy style checker over the token stream.
//!
//! * `S1` redundant parentheses around a lone number or identifier, reported at `(`.
//! * `S2` parenthesis nesting deeper than 3, reported at each `(` that opens level 4 or more.
//! * `S3` an identifier assigned more than once, reported at every repeated target.
//!
//! Rules only look at local token patterns, so they apply to sequences that do
//! not compile as well.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::vocab::{TokenClass, TokenSeq, Vocab};

pub const MAX_NESTING: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LintRule {
    S1,
    S2,
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: LintRule,
    /// Index into the full id sequence (BOS is 0).
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LintReport {
    pub violations: Vec<Violation>,
    pub tokens_scanned: usize,
}

impl LintReport {
    /// Violations per scanned token; zero for an empty body.
    pub fn rate(&self) -> f64 {
        if self.tokens_scanned == 0 {
            0.0
        } else {
            self.violations.len() as f64 / self.tokens_scanned as f64
        }
    }
}

pub fn lint(vocab: &Vocab, seq: &TokenSeq) -> LintReport {
    let body = seq.body();
    let class = |i: usize| body.get(i).map(|&t| vocab.class(t));
    let mut violations = Vec::new();
    let mut depth = 0usize;
    let mut assigned = HashSet::new();

    for (i, &tok) in body.iter().enumerate() {
        let position = i + 1;
        match vocab.class(tok) {
            TokenClass::LParen => {
                depth += 1;
                if class(i + 1).is_some_and(TokenClass::is_operand)
                    && class(i + 2) == Some(TokenClass::RParen)
                {
                    violations.push(Violation {
                        rule: LintRule::S1,
                        position,
                    });
                }
                if depth > MAX_NESTING {
                    violations.push(Violation {
                        rule: LintRule::S2,
                        position,
                    });
                }
            }
            TokenClass::RParen => depth = depth.saturating_sub(1),
            TokenClass::Ident
                if class(i + 1) == Some(TokenClass::Assign) && !assigned.insert(tok) =>
            {
                violations.push(Violation {
                    rule: LintRule::S3,
                    position,
                });
            }
            _ => {}
        }
    }
    LintReport {
        violations,
        tokens_scanned: body.len(),
    }
}
