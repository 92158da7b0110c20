//! MiniLang: vocabulary, compilability scorer, AST, lint rules.

mod external;
mod lint;
mod parser;
mod vocab;

pub use external::{external_check, ExternalChecker, ExternalError};
pub use lint::{lint, LintReport, LintRule, Violation, MAX_NESTING};
pub use parser::{
    ast_node_count, compile_check, parse, Assign, Ast, BinOp, CompileResult, ErrorKind, Expr,
    ParseError, SyntaxError,
};
pub use vocab::{
    TokenClass, TokenId, TokenSeq, Vocab, BOS_SURFACE, EOS_SURFACE, MINILANG_SURFACES,
};

/// Default maximum sequence length, counting BOS and EOS.
pub const DEFAULT_L_MAX: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LangError {
    #[error("unknown token {surface:?} at position {position}")]
    UnknownToken { surface: String, position: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),
}

/// A binary sequence-level constraint b(x).
pub trait Scorer: Sync {
    fn check(&self, seq: &TokenSeq) -> CompileResult;

    fn accepts(&self, seq: &TokenSeq) -> bool {
        self.check(seq).ok()
    }
}

/// The builtin grammar as a [`Scorer`].
#[derive(Debug, Clone)]
pub struct MiniLang {
    pub vocab: Vocab,
}

impl MiniLang {
    pub fn new(vocab: Vocab) -> MiniLang {
        MiniLang { vocab }
    }
}

impl Scorer for MiniLang {
    fn check(&self, seq: &TokenSeq) -> CompileResult {
        compile_check(&self.vocab, seq)
    }
}

impl<F> Scorer for F
where
    F: Fn(&TokenSeq) -> bool + Sync,
{
    fn check(&self, seq: &TokenSeq) -> CompileResult {
        if self(seq) {
            CompileResult::OK
        } else {
            CompileResult::failed(ErrorKind::UnexpectedToken, 0)
        }
    }
}
