//! Grammar-sampled MiniLang corpora: generation, corruption, dedup, split, persistence.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::digest::sha256_hex;
use crate::lang::{compile_check, TokenClass, TokenId, TokenSeq, Vocab, DEFAULT_L_MAX};
use crate::rng::substream;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("gave up after {0} attempts")]
    RetriesExhausted(usize),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("dataset file {file}: {message}")]
    Format { file: String, message: String },
    #[error("dataset digest mismatch: manifest {expected}, files {actual}")]
    DigestMismatch { expected: String, actual: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptOp {
    Drop,
    Duplicate,
    Substitute,
    Swap,
}

impl CorruptOp {
    pub const ALL: [CorruptOp; 4] = [
        CorruptOp::Drop,
        CorruptOp::Duplicate,
        CorruptOp::Substitute,
        CorruptOp::Swap,
    ];

    pub fn parse(s: &str) -> Option<CorruptOp> {
        match s {
            "drop" => Some(CorruptOp::Drop),
            "duplicate" => Some(CorruptOp::Duplicate),
            "substitute" => Some(CorruptOp::Substitute),
            "swap" => Some(CorruptOp::Swap),
            _ => None,
        }
    }
}

/// Relative weights of each grammar production; each group is normalized on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionWeights {
    pub factor_num: f64,
    pub factor_ident: f64,
    pub factor_paren: f64,
    pub expr_stop: f64,
    pub expr_add: f64,
    pub expr_sub: f64,
    pub term_stop: f64,
    pub term_mul: f64,
    pub term_div: f64,
}

impl Default for ProductionWeights {
    fn default() -> Self {
        ProductionWeights {
            factor_num: 0.4,
            factor_ident: 0.4,
            factor_paren: 0.2,
            expr_stop: 0.6,
            expr_add: 0.2,
            expr_sub: 0.2,
            term_stop: 0.7,
            term_mul: 0.15,
            term_div: 0.15,
        }
    }
}

impl ProductionWeights {
    fn all(&self) -> [f64; 9] {
        [
            self.factor_num,
            self.factor_ident,
            self.factor_paren,
            self.expr_stop,
            self.expr_add,
            self.expr_sub,
            self.term_stop,
            self.term_mul,
            self.term_div,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub min_statements: usize,
    pub max_statements: usize,
    /// Maximum expression nesting; 1 forbids parentheses.
    pub max_depth: usize,
    pub weights: ProductionWeights,
    pub l_max: usize,
    pub p_corrupt: f64,
    pub corrupt_ops: Vec<CorruptOp>,
    /// Resampling budget per program when a draw overflows `l_max`.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            min_statements: 1,
            max_statements: 3,
            max_depth: 3,
            weights: ProductionWeights::default(),
            l_max: DEFAULT_L_MAX,
            p_corrupt: 0.0,
            corrupt_ops: CorruptOp::ALL.to_vec(),
            max_retries: 1000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, vocab: &Vocab) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        let w = &self.weights;
        if w.all().iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("production weights must be finite and nonnegative");
        }
        if w.factor_num + w.factor_ident <= 0.0
            || w.expr_stop + w.expr_add + w.expr_sub <= 0.0
            || w.term_stop + w.term_mul + w.term_div <= 0.0
        {
            return bad("each production group needs positive total weight");
        }
        if !(0.0..=1.0).contains(&self.p_corrupt) {
            return bad("p_corrupt must lie in [0, 1]");
        }
        if self.p_corrupt > 0.0 && self.corrupt_ops.is_empty() {
            return bad("corruption requested but no operations enabled");
        }
        if self.min_statements == 0 || self.min_statements > self.max_statements {
            return bad("need 1 <= min_statements <= max_statements");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.l_max < 2 {
            return bad("l_max must leave room for BOS and EOS");
        }
        let needs = [
            (TokenClass::Ident, true),
            (TokenClass::Assign, true),
            (TokenClass::Semi, true),
            (TokenClass::Num, w.factor_num > 0.0),
            (
                TokenClass::LParen,
                w.factor_paren > 0.0 && self.max_depth > 1,
            ),
            (
                TokenClass::RParen,
                w.factor_paren > 0.0 && self.max_depth > 1,
            ),
            (TokenClass::Plus, w.expr_add > 0.0),
            (TokenClass::Minus, w.expr_sub > 0.0),
            (TokenClass::Star, w.term_mul > 0.0),
            (TokenClass::Slash, w.term_div > 0.0),
        ];
        for (class, required) in needs {
            if required && !vocab.interior_ids().any(|t| vocab.class(t) == class) {
                return bad(&format!("vocabulary lacks a {class:?} token"));
            }
        }
        Ok(())
    }
}

struct Expander<'a, R> {
    rng: &'a mut R,
    config: &'a GenConfig,
    idents: Vec<TokenId>,
    nums: Vec<TokenId>,
    by_class: Vec<(TokenClass, TokenId)>,
    out: Vec<TokenId>,
    budget: usize,
}

/// Raised inside expansion when the body would no longer fit.
struct Overflow;

impl<R: Rng> Expander<'_, R> {
    fn emit(&mut self, t: TokenId) -> Result<(), Overflow> {
        if self.out.len() >= self.budget {
            return Err(Overflow);
        }
        self.out.push(t);
        Ok(())
    }

    fn emit_class(&mut self, class: TokenClass) -> Result<(), Overflow> {
        let t = self
            .by_class
            .iter()
            .find(|(c, _)| *c == class)
            .map(|&(_, t)| t)
            .expect("validated vocabulary");
        self.emit(t)
    }

    fn pick(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding at the top end; return the last positive weight
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    fn statement(&mut self) -> Result<(), Overflow> {
        let target = *self.idents.choose(self.rng).expect("validated");
        self.emit(target)?;
        self.emit_class(TokenClass::Assign)?;
        self.expr(1)?;
        self.emit_class(TokenClass::Semi)
    }

    fn expr(&mut self, depth: usize) -> Result<(), Overflow> {
        self.term(depth)?;
        let w = &self.config.weights;
        let weights = [w.expr_stop, w.expr_add, w.expr_sub];
        loop {
            match self.pick(&weights) {
                0 => return Ok(()),
                1 => self.emit_class(TokenClass::Plus)?,
                _ => self.emit_class(TokenClass::Minus)?,
            }
            self.term(depth)?;
        }
    }

    fn term(&mut self, depth: usize) -> Result<(), Overflow> {
        self.factor(depth)?;
        let w = &self.config.weights;
        let weights = [w.term_stop, w.term_mul, w.term_div];
        loop {
            match self.pick(&weights) {
                0 => return Ok(()),
                1 => self.emit_class(TokenClass::Star)?,
                _ => self.emit_class(TokenClass::Slash)?,
            }
            self.factor(depth)?;
        }
    }

    fn factor(&mut self, depth: usize) -> Result<(), Overflow> {
        let w = &self.config.weights;
        let paren = if depth < self.config.max_depth {
            w.factor_paren
        } else {
            0.0
        };
        match self.pick(&[w.factor_num, w.factor_ident, paren]) {
            0 => {
                let t = *self.nums.choose(self.rng).expect("validated");
                self.emit(t)
            }
            1 => {
                let t = *self.idents.choose(self.rng).expect("validated");
                self.emit(t)
            }
            _ => {
                self.emit_class(TokenClass::LParen)?;
                self.expr(depth + 1)?;
                self.emit_class(TokenClass::RParen)
            }
        }
    }
}

/// Draws one program by stochastic leftmost expansion, resampling draws that
/// do not fit in `l_max`.
pub fn generate_program<R: Rng>(
    rng: &mut R,
    config: &GenConfig,
    vocab: &Vocab,
) -> Result<TokenSeq, CorpusError> {
    config.validate(vocab)?;
    let class_of = |c: TokenClass| -> Vec<TokenId> {
        vocab
            .interior_ids()
            .filter(|&t| vocab.class(t) == c)
            .collect()
    };
    let mut ex = Expander {
        idents: class_of(TokenClass::Ident),
        nums: class_of(TokenClass::Num),
        by_class: vocab.interior_ids().map(|t| (vocab.class(t), t)).collect(),
        rng,
        config,
        out: Vec::new(),
        budget: config.l_max - 2,
    };
    for _ in 0..config.max_retries.max(1) {
        ex.out.clear();
        let n = ex
            .rng
            .gen_range(config.min_statements..=config.max_statements);
        if (0..n).try_for_each(|_| ex.statement()).is_ok() {
            let seq = TokenSeq::terminated(std::mem::take(&mut ex.out));
            debug_assert!(compile_check(vocab, &seq).ok());
            return Ok(seq);
        }
    }
    Err(CorpusError::RetriesExhausted(config.max_retries))
}

/// Applies one uniformly chosen enabled edit at a uniformly chosen interior position.
///
/// Degenerate cases return the input unchanged: an empty body, `swap` with
/// fewer than two body tokens, `duplicate` that would exceed `l_max`, and
/// `substitute` when the vocabulary has a single interior token.
pub fn corrupt<R: Rng>(rng: &mut R, seq: &TokenSeq, config: &GenConfig, vocab: &Vocab) -> TokenSeq {
    let Some(&op) = config.corrupt_ops.choose(rng) else {
        return seq.clone();
    };
    let mut body = seq.body().to_vec();
    if body.is_empty() {
        return seq.clone();
    }
    let i = rng.gen_range(0..body.len());
    match op {
        CorruptOp::Drop => {
            body.remove(i);
        }
        CorruptOp::Duplicate => {
            if seq.len() < config.l_max {
                body.insert(i, body[i]);
            }
        }
        CorruptOp::Substitute => {
            let others: Vec<TokenId> = vocab.interior_ids().filter(|&t| t != body[i]).collect();
            if let Some(&t) = others.choose(rng) {
                body[i] = t;
            }
        }
        CorruptOp::Swap => {
            if body.len() >= 2 {
                let j = if i + 1 < body.len() { i } else { i - 1 };
                body.swap(j, j + 1);
            }
        }
    }
    if seq.is_terminated() {
        TokenSeq::terminated(body)
    } else {
        TokenSeq::truncated(body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: GenConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub attempts: usize,
    pub compilable: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<TokenSeq>,
    pub test: Vec<TokenSeq>,
    pub manifest: DatasetManifest,
}

pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const MANIFEST_FILE: &str = "dataset.json";

fn render(vocab: &Vocab, seqs: &[TokenSeq]) -> String {
    let mut s = String::new();
    for seq in seqs {
        s.push_str(&vocab.detokenize(seq));
        s.push('\n');
    }
    s
}

fn content_digest(train: &str, test: &str) -> String {
    sha256_hex(format!("{train}\u{0}{test}").as_bytes())
}

/// Generates `n_train + n_test` distinct programs and splits them in draw order.
///
/// Candidate `j` comes from substream `j` of the seed, so the result depends
/// only on `(config, n_train, n_test)`.
pub fn build_dataset(
    config: &GenConfig,
    vocab: &Vocab,
    n_train: usize,
    n_test: usize,
) -> Result<Dataset, CorpusError> {
    if n_train == 0 || n_test == 0 {
        return Err(CorpusError::InvalidConfig(
            "both splits must be nonempty".into(),
        ));
    }
    config.validate(vocab)?;
    let want = n_train + n_test;
    let max_attempts = want.saturating_mul(50).max(1000);
    let mut seen = HashSet::with_capacity(want);
    let mut all = Vec::with_capacity(want);
    let mut attempts = 0;
    while all.len() < want {
        if attempts >= max_attempts {
            return Err(CorpusError::RetriesExhausted(attempts));
        }
        let mut rng = substream(config.seed, attempts as u64);
        attempts += 1;
        let mut seq = generate_program(&mut rng, config, vocab)?;
        if config.p_corrupt > 0.0 && rng.gen::<f64>() < config.p_corrupt {
            seq = corrupt(&mut rng, &seq, config, vocab);
        }
        if seen.insert(seq.clone()) {
            all.push(seq);
        }
    }
    let test = all.split_off(n_train);
    let train = all;
    let compilable = train
        .iter()
        .chain(&test)
        .filter(|s| compile_check(vocab, s).ok())
        .count();
    let digest = content_digest(&render(vocab, &train), &render(vocab, &test));
    Ok(Dataset {
        train,
        test,
        manifest: DatasetManifest {
            seed: config.seed,
            config: config.clone(),
            n_train,
            n_test,
            attempts,
            compilable,
            digest,
        },
    })
}

impl Dataset {
    pub fn compilability_rate(&self, vocab: &Vocab) -> f64 {
        let n = self.train.len() + self.test.len();
        let ok = self
            .train
            .iter()
            .chain(&self.test)
            .filter(|s| compile_check(vocab, s).ok())
            .count();
        ok as f64 / n as f64
    }

    /// The empirical training distribution p*(x): uniform over the (distinct) train split.
    pub fn empirical_probability(&self, seq: &TokenSeq) -> f64 {
        if self.train.contains(seq) {
            1.0 / self.train.len() as f64
        } else {
            0.0
        }
    }

    pub fn save(&self, dir: &Path, vocab: &Vocab) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(TRAIN_FILE), render(vocab, &self.train))?;
        fs::write(dir.join(TEST_FILE), render(vocab, &self.test))?;
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    /// Loads a saved dataset. Programs without a trailing `;` are read as
    /// EOS-terminated bodies like any other line.
    pub fn load(dir: &Path, vocab: &Vocab) -> Result<Dataset, CorpusError> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let train_text = fs::read_to_string(dir.join(TRAIN_FILE))?;
        let test_text = fs::read_to_string(dir.join(TEST_FILE))?;
        let actual = content_digest(&train_text, &test_text);
        if actual != manifest.digest {
            return Err(CorpusError::DigestMismatch {
                expected: manifest.digest,
                actual,
            });
        }
        let parse = |file: &str, text: &str| -> Result<Vec<TokenSeq>, CorpusError> {
            text.lines()
                .map(|line| {
                    vocab.tokenize(line).map_err(|e| CorpusError::Format {
                        file: file.to_string(),
                        message: e.to_string(),
                    })
                })
                .collect()
        };
        Ok(Dataset {
            train: parse(TRAIN_FILE, &train_text)?,
            test: parse(TEST_FILE, &test_text)?,
            manifest,
        })
    }
}
