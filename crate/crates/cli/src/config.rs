//! Flat `key = value` settings with dotted section prefixes.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, command
//! flags. Every key is also a long flag of the same name.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    /// Shorter flag accepted in addition to the dotted name.
    pub alias: Option<&'static str>,
    pub short: Option<char>,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
        alias: None,
        short: None,
    }
}

pub const KEYS: &[Key] = &[
    key(
        "seed",
        "0",
        "master seed; every component seed is derived from it",
    ),
    key("corpus.n_train", "2000", "training programs"),
    key(
        "corpus.n_test",
        "222",
        "held-out programs (a 90/10 split with the default n_train)",
    ),
    key(
        "corpus.min_statements",
        "1",
        "fewest statements per program",
    ),
    key("corpus.max_statements", "3", "most statements per program"),
    key(
        "corpus.max_depth",
        "3",
        "expression nesting limit; 1 forbids parentheses",
    ),
    key(
        "corpus.p_corrupt",
        "0",
        "probability of corrupting a generated program",
    ),
    key(
        "corpus.corrupt_ops",
        "drop,duplicate,substitute,swap",
        "corruption operators",
    ),
    key(
        "corpus.l_max",
        "24",
        "maximum sequence length including BOS and EOS",
    ),
    key("corpus.factor_num", "0.4", "weight of NUM factors"),
    key("corpus.factor_ident", "0.4", "weight of IDENT factors"),
    key(
        "corpus.factor_paren",
        "0.2",
        "weight of parenthesized factors",
    ),
    key("corpus.expr_stop", "0.6", "weight of ending an expression"),
    key("corpus.expr_add", "0.2", "weight of '+'"),
    key("corpus.expr_sub", "0.2", "weight of '-'"),
    key("corpus.term_stop", "0.7", "weight of ending a term"),
    key("corpus.term_mul", "0.15", "weight of '*'"),
    key("corpus.term_div", "0.15", "weight of '/'"),
    key("model.kind", "mlp", "mlp or tabular"),
    key(
        "model.k",
        "8",
        "context window (mlp) or n-gram order (tabular)",
    ),
    key("model.d", "16", "embedding width"),
    key("model.h", "64", "hidden width"),
    key("train.lr", "5e-4", "pretraining learning rate"),
    key("train.batch_size", "32", "pretraining batch size"),
    key("train.epochs", "7", "pretraining epochs"),
    Key {
        alias: Some("method"),
        ..key("tune.method", "kldpg", "kldpg, reinforce-b or reinforce-p")
    },
    key("tune.lr", "1e-3", "fine-tuning learning rate"),
    key("tune.batch_size", "256", "samples per gradient update"),
    Key {
        alias: Some("updates"),
        ..key("tune.updates", "250", "gradient updates")
    },
    key("tune.warmup", "20", "linear warmup updates"),
    key("tune.eval_interval", "25", "updates between evaluations"),
    key("tune.eval_samples", "1000", "policy samples per evaluation"),
    key("tune.kl_samples", "2048", "proposal samples per swap test"),
    key("tune.clip_norm", "10", "gradient norm ceiling"),
    key("tune.optimizer", "adam", "adam or sgd"),
    key(
        "tune.baseline",
        "false",
        "subtract the mean reward (Reinforce only)",
    ),
    key("tune.exact", "false", "use enumeration for the forward KL"),
    key("eval.samples", "1000", "policy samples per evaluation"),
    key(
        "eval.kl_samples",
        "4096",
        "proposal samples for the forward KL",
    ),
    key(
        "eval.repeats",
        "3",
        "sampling repeats for the error histogram",
    ),
    key(
        "eval.l_max",
        "24",
        "maximum sampled length including BOS and EOS",
    ),
    Key {
        alias: Some("n"),
        short: Some('n'),
        ..key("sample.n", "20", "programs to draw")
    },
    Key {
        alias: Some("prompt"),
        ..key(
            "sample.prompt",
            "",
            "surface tokens every sample starts with",
        )
    },
    key(
        "exact.source",
        "tiny",
        "tiny (built-in config) or base (the --base checkpoint)",
    ),
    key("exact.l_max", "6", "length limit for enumeration"),
    key("data", "", "dataset directory"),
    key("base", "", "base model checkpoint"),
    key("policy", "", "policy checkpoint"),
];

pub fn find(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: KEYS
                .iter()
                .map(|k| (k.name.to_string(), k.default.to_string()))
                .collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), CliError> {
        if find(name).is_none() {
            return Err(CliError::Config(format!("unknown key {name:?}")));
        }
        self.values.insert(name.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a settings file: `key = value` lines, `#` comments, blank lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected key = value", i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered key {name}"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{name} = {raw:?}: {e}")))
    }

    /// A path-valued key that must be set.
    pub fn path(&self, name: &str) -> Result<&Path, CliError> {
        match self.raw(name) {
            "" => Err(CliError::Config(format!("--{name} is required"))),
            p => Ok(Path::new(p)),
        }
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
