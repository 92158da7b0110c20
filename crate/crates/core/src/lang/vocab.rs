use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

use super::LangError;

/// Index of a token in a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u16);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Syntactic class of a surface token, derived from its spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Ident,
    Num,
    Plus,
    Minus,
    Star,
    Slash,
    Assign,
    Semi,
    LParen,
    RParen,
    Bos,
    Eos,
    /// Anything the grammar does not know about. Never derivable.
    Other,
}

impl TokenClass {
    fn of(surface: &str) -> TokenClass {
        match surface {
            "+" => TokenClass::Plus,
            "-" => TokenClass::Minus,
            "*" => TokenClass::Star,
            "/" => TokenClass::Slash,
            "=" => TokenClass::Assign,
            ";" => TokenClass::Semi,
            "(" => TokenClass::LParen,
            ")" => TokenClass::RParen,
            s if s.chars().all(|c| c.is_ascii_alphabetic()) => TokenClass::Ident,
            s if s.chars().all(|c| c.is_ascii_digit()) => TokenClass::Num,
            _ => TokenClass::Other,
        }
    }

    pub fn is_operand(self) -> bool {
        matches!(self, TokenClass::Ident | TokenClass::Num)
    }
}

pub const BOS_SURFACE: &str = "<bos>";
pub const EOS_SURFACE: &str = "<eos>";

/// The MiniLang token inventory, in id order after BOS and EOS.
pub const MINILANG_SURFACES: [&str; 14] = [
    "x", "y", "z", "0", "1", "2", "+", "-", "*", "/", "=", ";", "(", ")",
];

/// A fixed, ordered token inventory with distinguished BOS and EOS ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    bos: TokenId,
    eos: TokenId,
    classes: Vec<TokenClass>,
    lookup: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    bos: u16,
    eos: u16,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = LangError;

    fn try_from(r: VocabRepr) -> Result<Self, Self::Error> {
        Vocab::new(r.tokens, TokenId(r.bos), TokenId(r.eos))
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            bos: v.bos.0,
            eos: v.eos.0,
        }
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>, bos: TokenId, eos: TokenId) -> Result<Vocab, LangError> {
        if bos == eos || bos.index() >= tokens.len() || eos.index() >= tokens.len() {
            return Err(LangError::InvalidVocab(
                "BOS and EOS must be distinct members".into(),
            ));
        }
        if tokens.len() > u16::MAX as usize {
            return Err(LangError::InvalidVocab("too many tokens".into()));
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(LangError::InvalidVocab(format!(
                    "token {i} has an empty or whitespace-bearing surface"
                )));
            }
            if lookup.insert(t.clone(), TokenId(i as u16)).is_some() {
                return Err(LangError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        let classes = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == bos.index() {
                    TokenClass::Bos
                } else if i == eos.index() {
                    TokenClass::Eos
                } else {
                    TokenClass::of(t)
                }
            })
            .collect();
        Ok(Vocab {
            tokens,
            bos,
            eos,
            classes,
            lookup,
        })
    }

    /// Builds a vocabulary of `<bos>`, `<eos>` followed by `surfaces` in order.
    pub fn with_surfaces(surfaces: &[&str]) -> Result<Vocab, LangError> {
        let tokens = [BOS_SURFACE, EOS_SURFACE]
            .iter()
            .chain(surfaces)
            .map(|s| s.to_string())
            .collect();
        Vocab::new(tokens, TokenId(0), TokenId(1))
    }

    /// The 16-token MiniLang vocabulary.
    pub fn minilang() -> Vocab {
        Vocab::with_surfaces(&MINILANG_SURFACES).expect("builtin vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.tokens
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.classes[id.index()]
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.lookup.get(surface).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos
    }

    /// Ids of every token that may appear between BOS and EOS.
    pub fn interior_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as u16)
            .map(TokenId)
            .filter(move |&t| !self.is_special(t))
    }

    /// Splits whitespace-separated `text` into ids and brackets them with BOS/EOS.
    pub fn tokenize(&self, text: &str) -> Result<TokenSeq, LangError> {
        let mut body = Vec::new();
        for (position, surface) in text.split_whitespace().enumerate() {
            match self.id(surface) {
                Some(id) if !self.is_special(id) => body.push(id),
                _ => {
                    return Err(LangError::UnknownToken {
                        surface: surface.to_string(),
                        position,
                    })
                }
            }
        }
        Ok(TokenSeq::terminated(body))
    }

    /// Surface form of the body, tokens joined by single spaces.
    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        let mut out = String::new();
        for (i, &t) in seq.body().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(t));
        }
        out
    }

    /// Like [`Vocab::tokenize`], but also accepts a prefix without implied EOS.
    pub fn tokenize_prefix(&self, text: &str) -> Result<Vec<TokenId>, LangError> {
        self.tokenize(text).map(|s| s.body().to_vec())
    }
}

/// A sample object: BOS, a body of interior tokens, and optionally EOS.
///
/// BOS and EOS are implicit, so the body can never contain them. A sequence
/// without EOS was cut off at the length limit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSeq {
    body: Vec<TokenId>,
    terminated: bool,
}

impl TokenSeq {
    pub fn terminated(body: Vec<TokenId>) -> TokenSeq {
        TokenSeq {
            body,
            terminated: true,
        }
    }

    pub fn truncated(body: Vec<TokenId>) -> TokenSeq {
        TokenSeq {
            body,
            terminated: false,
        }
    }

    /// Validates a full id sequence (starting with BOS) against `vocab` and `l_max`.
    pub fn from_ids(ids: &[TokenId], vocab: &Vocab, l_max: usize) -> Result<TokenSeq, LangError> {
        let invalid = |why: &str| Err(LangError::InvalidSequence(why.to_string()));
        if ids.first() != Some(&vocab.bos()) {
            return invalid("first id must be BOS");
        }
        if ids.len() > l_max {
            return invalid("sequence exceeds the length limit");
        }
        let rest = &ids[1..];
        let (body, terminated) = match rest.last() {
            Some(&t) if t == vocab.eos() => (&rest[..rest.len() - 1], true),
            _ => (rest, false),
        };
        for &t in body {
            if t.index() >= vocab.len() {
                return invalid("id outside the vocabulary");
            }
            if vocab.is_special(t) {
                return invalid("BOS/EOS inside the body");
            }
        }
        Ok(TokenSeq {
            body: body.to_vec(),
            terminated,
        })
    }

    pub fn body(&self) -> &[TokenId] {
        &self.body
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Length in tokens, counting BOS and (if present) EOS.
    pub fn len(&self) -> usize {
        self.body.len() + 1 + usize::from(self.terminated)
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    /// The full id sequence including BOS and (if present) EOS.
    pub fn ids(&self, vocab: &Vocab) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(self.len());
        ids.push(vocab.bos());
        ids.extend_from_slice(&self.body);
        if self.terminated {
            ids.push(vocab.eos());
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minilang_has_sixteen_tokens() {
        let v = Vocab::minilang();
        assert_eq!(v.len(), 16);
        assert_ne!(v.bos(), v.eos());
        assert_eq!(v.interior_ids().count(), 14);
        assert_eq!(v.class(v.id("y").unwrap()), TokenClass::Ident);
        assert_eq!(v.class(v.id("2").unwrap()), TokenClass::Num);
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocab::minilang();
        let s = v.tokenize("x = 1 ;").unwrap();
        let ids: Vec<&str> = s.ids(&v).into_iter().map(|t| v.surface(t)).collect();
        assert_eq!(ids, ["<bos>", "x", "=", "1", ";", "<eos>"]);

        let empty = v.tokenize("").unwrap();
        assert_eq!(empty.ids(&v), vec![v.bos(), v.eos()]);

        match v.tokenize("x = w ;") {
            Err(LangError::UnknownToken { surface, position }) => {
                assert_eq!(surface, "w");
                assert_eq!(position, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(v.tokenize("<eos>").is_err());
    }

    #[test]
    fn detokenize_examples() {
        let v = Vocab::minilang();
        let s = v.tokenize("x = 1 ;").unwrap();
        assert_eq!(v.detokenize(&s), "x = 1 ;");
        assert_eq!(v.detokenize(&s).chars().count(), 7);
        assert_eq!(v.detokenize(&TokenSeq::terminated(vec![])), "");
    }

    #[test]
    fn rejects_bad_vocab() {
        assert!(Vocab::with_surfaces(&["x", "x"]).is_err());
        assert!(Vocab::with_surfaces(&["x", ""]).is_err());
        assert!(Vocab::new(vec!["a".into(), "b".into()], TokenId(0), TokenId(0)).is_err());
    }

    #[test]
    fn from_ids_validates() {
        let v = Vocab::minilang();
        let x = v.id("x").unwrap();
        assert!(TokenSeq::from_ids(&[x], &v, 24).is_err());
        assert!(TokenSeq::from_ids(&[v.bos(), v.eos(), x], &v, 24).is_err());
        assert!(TokenSeq::from_ids(&[v.bos(), x, v.bos()], &v, 24).is_err());
        assert!(TokenSeq::from_ids(&[v.bos(), x, x, x], &v, 3).is_err());
        let t = TokenSeq::from_ids(&[v.bos(), x, x], &v, 3).unwrap();
        assert!(!t.is_terminated());
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v = Vocab::minilang();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }

    proptest::proptest! {
        #[test]
        fn tokenize_inverts_detokenize(ids in proptest::collection::vec(2u16..16, 0..22)) {
            let v = Vocab::minilang();
            let s = TokenSeq::terminated(ids.into_iter().map(TokenId).collect());
            proptest::prop_assert_eq!(v.tokenize(&v.detokenize(&s)).unwrap(), s);
        }
    }
}
