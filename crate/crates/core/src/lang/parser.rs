//! Recursive-descent recognizer and AST builder for MiniLang.
//!
//! ```text
//! program := stmt+
//! stmt    := IDENT '=' expr ';'
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := NUM | IDENT | '(' expr ')'
//! ```
//!
//! Positions are indices into the full id sequence, so BOS is 0 and the first
//! body token is 1.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::vocab::{TokenClass, TokenId, TokenSeq, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    Empty,
    UnexpectedToken,
    UnbalancedParen,
    MissingSemicolon,
    Truncated,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::Empty,
        ErrorKind::UnexpectedToken,
        ErrorKind::UnbalancedParen,
        ErrorKind::MissingSemicolon,
        ErrorKind::Truncated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Empty => "Empty",
            ErrorKind::UnexpectedToken => "UnexpectedToken",
            ErrorKind::UnbalancedParen => "UnbalancedParen",
            ErrorKind::MissingSemicolon => "MissingSemicolon",
            ErrorKind::Truncated => "Truncated",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError {
    pub kind: ErrorKind,
    pub position: usize,
}

/// Outcome of the compilability scorer: accepted, or the leftmost error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub error: Option<SyntaxError>,
}

impl CompileResult {
    pub const OK: CompileResult = CompileResult { error: None };

    pub fn failed(kind: ErrorKind, position: usize) -> CompileResult {
        CompileResult {
            error: Some(SyntaxError { kind, position }),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn error_kind(&self) -> Option<ErrorKind> {
        self.error.map(|e| e.kind)
    }

    pub fn error_position(&self) -> Option<usize> {
        self.error.map(|e| e.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(TokenId),
    Var(TokenId),
    BinOp {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::BinOp { lhs, rhs, .. } => 1 + lhs.node_count() + rhs.node_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assign {
    pub target: TokenId,
    pub value: Expr,
}

/// A parsed program. The root is the implicit `Program` node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub statements: Vec<Assign>,
}

impl Ast {
    /// Counts Program, Assign, target Var, and every expression node.
    /// Parentheses contribute nothing.
    pub fn node_count(&self) -> usize {
        1 + self
            .statements
            .iter()
            .map(|s| 2 + s.value.node_count())
            .sum::<usize>()
    }
}

struct Parser<'a> {
    vocab: &'a Vocab,
    body: &'a [TokenId],
    pos: usize,
}

type Step<T> = Result<T, SyntaxError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> TokenClass {
        self.peek_at(self.pos)
    }

    fn peek_at(&self, i: usize) -> TokenClass {
        self.body
            .get(i)
            .map_or(TokenClass::Eos, |&t| self.vocab.class(t))
    }

    fn fail(&self, kind: ErrorKind) -> SyntaxError {
        SyntaxError {
            kind,
            position: self.pos + 1,
        }
    }

    fn bump(&mut self) -> TokenId {
        let t = self.body[self.pos];
        self.pos += 1;
        t
    }

    fn program(&mut self) -> Step<Ast> {
        let mut statements = Vec::new();
        while self.pos < self.body.len() {
            statements.push(self.statement()?);
        }
        Ok(Ast { statements })
    }

    fn statement(&mut self) -> Step<Assign> {
        if self.peek() != TokenClass::Ident {
            return Err(self.fail(ErrorKind::UnexpectedToken));
        }
        let target = self.bump();
        if self.peek() != TokenClass::Assign {
            return Err(self.fail(ErrorKind::UnexpectedToken));
        }
        self.bump();
        let value = self.expr()?;
        match self.peek() {
            TokenClass::Semi => {
                self.bump();
                Ok(Assign { target, value })
            }
            TokenClass::Eos => Err(self.fail(ErrorKind::MissingSemicolon)),
            TokenClass::Ident if self.peek_at(self.pos + 1) == TokenClass::Assign => {
                Err(self.fail(ErrorKind::MissingSemicolon))
            }
            TokenClass::RParen => Err(self.fail(ErrorKind::UnbalancedParen)),
            _ => Err(self.fail(ErrorKind::UnexpectedToken)),
        }
    }

    fn expr(&mut self) -> Step<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                TokenClass::Plus => BinOp::Add,
                TokenClass::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::BinOp {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Step<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                TokenClass::Star => BinOp::Mul,
                TokenClass::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::BinOp {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn factor(&mut self) -> Step<Expr> {
        match self.peek() {
            TokenClass::Num => Ok(Expr::Num(self.bump())),
            TokenClass::Ident => Ok(Expr::Var(self.bump())),
            TokenClass::LParen => {
                self.bump();
                let inner = self.expr()?;
                match self.peek() {
                    TokenClass::RParen => {
                        self.bump();
                        Ok(inner)
                    }
                    TokenClass::Semi | TokenClass::Eos => {
                        Err(self.fail(ErrorKind::UnbalancedParen))
                    }
                    _ => Err(self.fail(ErrorKind::UnexpectedToken)),
                }
            }
            _ => Err(self.fail(ErrorKind::UnexpectedToken)),
        }
    }
}

fn run(vocab: &Vocab, seq: &TokenSeq) -> Step<Ast> {
    if !seq.is_terminated() {
        return Err(SyntaxError {
            kind: ErrorKind::Truncated,
            position: seq.len(),
        });
    }
    if seq.body().is_empty() {
        return Err(SyntaxError {
            kind: ErrorKind::Empty,
            position: 1,
        });
    }
    Parser {
        vocab,
        body: seq.body(),
        pos: 0,
    }
    .program()
}

/// The compilability scorer b(x).
pub fn compile_check(vocab: &Vocab, seq: &TokenSeq) -> CompileResult {
    CompileResult {
        error: run(vocab, seq).err(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse: {} at token {}", .0.kind, .0.position)]
pub struct ParseError(pub SyntaxError);

pub fn parse(vocab: &Vocab, seq: &TokenSeq) -> Result<Ast, ParseError> {
    run(vocab, seq).map_err(ParseError)
}

pub fn ast_node_count(ast: &Ast) -> usize {
    ast.node_count()
}
