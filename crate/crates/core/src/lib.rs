//! Constraining an autoregressive model to compilable MiniLang programs.
//!
//! The energy-based target is `P(x) = a(x) b(x)`, where `a` is a pretrained
//! autoregressive [`policy`] and `b` the grammar check in [`lang`]. The
//! [`tuning`] module trains a policy toward the normalized `p = P / Z` with
//! KL-adaptive distributional policy gradients, alongside two Reinforce
//! baselines, and [`metrics`] scores the results.

pub mod corpus;
pub mod digest;
pub mod ebm;
pub mod lang;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod tiny;
pub mod tuning;

pub use lang::{CompileResult, ErrorKind, MiniLang, Scorer, TokenId, TokenSeq, Vocab};
pub use policy::{AnyPolicy, MlpPolicy, Policy, TabularPolicy};
