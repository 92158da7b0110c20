//! Fine-tuning toward the constrained target: KL-DPG with an adaptive
//! proposal, and Reinforce with reward `b` or `P`.

mod kl;
mod step;
mod trace;

pub use kl::{
    exact_reverse_kl, forward_kl_from_batch, is_forward_kl, pool_weights, reverse_kl,
    reverse_kl_on, KlEstimate,
};
pub use step::{kldpg_direction, kldpg_step, reinforce_direction, reinforce_step, Direction};
pub use trace::{Evaluation, TraceManifest, TuneTrace, UpdateLog, TRACE_PREFIX};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::ebm::{Ebm, EbmError, ExactP, PartitionEstimate, WeightPool};
use crate::lang::{Scorer, TokenSeq, DEFAULT_L_MAX};
use crate::metrics::{evaluate, EvalOptions, ForwardKl};
use crate::policy::{sample_many, Adam, AdamConfig, Policy};
use crate::rng::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("invalid tuning config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ebm(#[from] EbmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "kldpg")]
    KlDpg,
    #[serde(rename = "reinforce-b")]
    ReinforceB,
    #[serde(rename = "reinforce-p")]
    ReinforceP,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::KlDpg, Method::ReinforceB, Method::ReinforceP];

    pub fn name(self) -> &'static str {
        match self {
            Method::KlDpg => "kldpg",
            Method::ReinforceB => "reinforce-b",
            Method::ReinforceP => "reinforce-p",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Method, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected kldpg, reinforce-b or reinforce-p)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam(AdamConfig),
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub updates: usize,
    pub warmup: usize,
    pub eval_interval: usize,
    pub eval_samples: usize,
    /// Proposal draws per swap test.
    pub kl_samples: usize,
    pub seed: u64,
    pub l_max: usize,
    pub optimizer: Optimizer,
    pub clip_norm: f64,
    /// Subtract the batch mean reward (Reinforce only).
    pub baseline: bool,
    /// Use enumeration for the forward KL and the swap test.
    pub exact: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            method: Method::KlDpg,
            lr: 1e-3,
            batch_size: 256,
            updates: 250,
            warmup: 20,
            eval_interval: 10,
            eval_samples: 1024,
            kl_samples: 1024,
            seed: 0,
            l_max: DEFAULT_L_MAX,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            clip_norm: 10.0,
            baseline: false,
            exact: false,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::InvalidConfig(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.kl_samples == 0 {
            return bad("batch_size, eval_interval and kl_samples must be at least 1");
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be at least 2");
        }
        if self.l_max < 2 {
            return bad("l_max must be at least 2");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if self.baseline && self.method == Method::KlDpg {
            return bad("baseline applies to Reinforce only");
        }
        Ok(())
    }

    /// Linear warmup to `lr` over `warmup` updates (1-based), then constant.
    pub fn lr_at(&self, update: usize) -> f64 {
        if self.warmup == 0 || update >= self.warmup {
            self.lr
        } else {
            self.lr * update as f64 / self.warmup as f64
        }
    }

    /// Updates after which an evaluation is recorded, always including 0 and the last.
    pub fn eval_points(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..=self.updates).step_by(self.eval_interval).collect();
        if *v.last().expect("contains 0") != self.updates {
            v.push(self.updates);
        }
        v
    }
}

/// A run that stopped early; `trace` covers the updates completed before the failure.
#[derive(Debug)]
pub struct TuneAbort<P> {
    pub error: TuneError,
    pub update: usize,
    pub policy: P,
    pub trace: TuneTrace,
}

impl<P> fmt::Display for TuneAbort<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tuning aborted at update {}: {}",
            self.update, self.error
        )
    }
}

enum Step {
    Sgd,
    Adam(Box<Adam>),
}

struct Swapper {
    exact: Option<ExactP>,
    pool: WeightPool,
}

impl Swapper {
    /// Forward KL of π and of the proposal, sharing one batch and one Ẑ.
    fn test<P, S, Pi>(
        &mut self,
        ebm: &Ebm<'_, P, S>,
        pi: &Pi,
        q: &Pi,
        config: &TuneConfig,
        eval_index: usize,
    ) -> Result<(f64, f64, PartitionEstimate), TuneError>
    where
        P: Policy,
        S: Scorer + ?Sized,
        Pi: Policy,
    {
        if let Some(exact) = &self.exact {
            return Ok((
                exact.kl_to(pi),
                exact.kl_to(q),
                PartitionEstimate::exact(exact.z),
            ));
        }
        let seed = derive_seed(config.seed, &format!("swap-{eval_index}"));
        let batch = sample_many(q, seed, config.kl_samples, config.l_max, &[]);
        pool_weights(ebm, q, &batch, &mut self.pool);
        let z = self.pool.estimate();
        let kl_pi = forward_kl_from_batch(ebm, &z, pi, q, &batch)?;
        let kl_q = forward_kl_from_batch(ebm, &z, q, q, &batch)?;
        Ok((kl_pi, kl_q, z))
    }
}

/// Runs `config.updates` gradient updates starting from `a`, evaluating on
/// the schedule of [`TuneConfig::eval_points`].
pub fn tune<P, S>(
    a: &P,
    scorer: &S,
    test: &[TokenSeq],
    config: &TuneConfig,
) -> Result<(P, TuneTrace), Box<TuneAbort<P>>>
where
    P: Policy,
    S: Scorer + ?Sized,
{
    let started = std::time::Instant::now();
    let ebm = Ebm::new(a, scorer);
    let mut pi = a.clone();
    let mut q = a.clone();
    let mut trace = TuneTrace::new(config.method);
    let abort = |error, update, policy: P, trace: TuneTrace| {
        Box::new(TuneAbort {
            error,
            update,
            policy,
            trace,
        })
    };
    if let Err(e) = config.validate() {
        return Err(abort(e, 0, pi, trace));
    }
    let exact = if config.exact {
        match ebm.exact_p(config.l_max) {
            Ok(p) => Some(p),
            Err(e) => return Err(abort(e.into(), 0, pi, trace)),
        }
    } else {
        None
    };
    let mut swapper = Swapper {
        exact,
        pool: WeightPool::default(),
    };
    let mut optimizer = match config.optimizer {
        Optimizer::Sgd => Step::Sgd,
        Optimizer::Adam(c) => Step::Adam(Box::new(Adam::new(pi.num_params(), c))),
    };
    let eval_points = config.eval_points();
    let mut next_eval = 0usize;

    for update in 0..=config.updates {
        if update > 0 {
            let seed = derive_seed(config.seed, &format!("batch-{update}"));
            let result = match config.method {
                Method::KlDpg => {
                    let batch = sample_many(&q, seed, config.batch_size, config.l_max, &[]);
                    kldpg_direction(&pi, &q, &ebm, &batch)
                }
                Method::ReinforceB => {
                    let batch = sample_many(&pi, seed, config.batch_size, config.l_max, &[]);
                    let reward =
                        |x: &TokenSeq| f64::from(u8::from(x.is_terminated() && scorer.accepts(x)));
                    reinforce_direction(&pi, reward, &batch, config.baseline)
                }
                Method::ReinforceP => {
                    let batch = sample_many(&pi, seed, config.batch_size, config.l_max, &[]);
                    reinforce_direction(&pi, |x: &TokenSeq| ebm.score(x), &batch, config.baseline)
                }
            };
            let mut d = match result {
                Ok(d) => d,
                Err(e) => return Err(abort(e, update, pi, trace)),
            };
            let grad_norm = d.norm;
            let clipped = d.clip(config.clip_norm);
            let lr = config.lr_at(update);
            match &mut optimizer {
                Step::Sgd => {
                    for (p, g) in pi.params_mut().iter_mut().zip(&d.grad) {
                        *p += lr * g;
                    }
                }
                Step::Adam(adam) => adam.ascend(pi.params_mut(), &d.grad, lr),
            }
            trace.record_update(UpdateLog {
                update,
                mean_reward: d.mean_weight,
                grad_norm,
                clipped,
                lr,
            });
        }

        if eval_points.get(next_eval) == Some(&update) {
            let (kl_pi, kl_q, z) = match swapper.test(&ebm, &pi, &q, config, next_eval) {
                Ok(v) => v,
                Err(e) => return Err(abort(e, update, pi, trace)),
            };
            let swapped = config.method == Method::KlDpg && kl_pi < kl_q;
            if swapped {
                q = pi.clone();
                swapper.pool = WeightPool::default();
            }
            let opts = EvalOptions {
                n_samples: config.eval_samples,
                l_max: config.l_max,
                seed: derive_seed(config.seed, &format!("eval-{next_eval}")),
            };
            let metrics = evaluate(&pi, &ebm, test, &opts, ForwardKl::<P>::Given(kl_pi));
            trace.record_evaluation(Evaluation {
                update,
                metrics,
                swapped,
                proposal_kl: if swapped { kl_pi } else { kl_q },
                z: z.z,
            });
            next_eval += 1;
        }
    }
    trace.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((pi, trace))
}
