//! Single gradient steps for KL-DPG and Reinforce.

use super::TuneError;
use crate::ebm::Ebm;
use crate::lang::{Scorer, TokenSeq};
use crate::policy::{weighted_grad_sum, Policy};

/// An ascent direction averaged over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub grad: Vec<f64>,
    /// Mean pseudoreward `P/q` for KL-DPG, mean reward for Reinforce.
    pub mean_weight: f64,
    pub norm: f64,
}

impl Direction {
    fn from_weights<P: Policy>(
        pi: &P,
        batch: &[TokenSeq],
        weights: &[f64],
    ) -> Result<Direction, TuneError> {
        let n = batch.len().max(1) as f64;
        let items: Vec<(&TokenSeq, f64)> = batch.iter().zip(weights.iter().copied()).collect();
        let mut grad = weighted_grad_sum(pi, &items);
        for g in &mut grad {
            *g /= n;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(TuneError::NonFiniteGradient);
        }
        Ok(Direction {
            grad,
            mean_weight: weights.iter().sum::<f64>() / n,
            norm,
        })
    }

    /// Rescales to `max_norm` if longer; returns whether it did.
    pub fn clip(&mut self, max_norm: f64) -> bool {
        if self.norm <= max_norm || self.norm == 0.0 {
            return false;
        }
        let s = max_norm / self.norm;
        for g in &mut self.grad {
            *g *= s;
        }
        self.norm = max_norm;
        true
    }
}

/// `mean (P(x)/q(x)) ∇ log π(x)` over a batch drawn from `q`.
pub fn kldpg_direction<Pi, Q, A, S>(
    pi: &Pi,
    q: &Q,
    ebm: &Ebm<'_, A, S>,
    batch: &[TokenSeq],
) -> Result<Direction, TuneError>
where
    Pi: Policy,
    Q: Policy,
    A: Policy,
    S: Scorer + ?Sized,
{
    let weights: Vec<f64> = batch.iter().map(|x| ebm.weight(q, x)).collect();
    Direction::from_weights(pi, batch, &weights)
}

/// `mean R(x) ∇ log π(x)` over a batch drawn from `π`. With `baseline`, the
/// batch mean reward is subtracted first.
pub fn reinforce_direction<Pi, R>(
    pi: &Pi,
    reward: R,
    batch: &[TokenSeq],
    baseline: bool,
) -> Result<Direction, TuneError>
where
    Pi: Policy,
    R: Fn(&TokenSeq) -> f64,
{
    let rewards: Vec<f64> = batch.iter().map(&reward).collect();
    if !baseline {
        return Direction::from_weights(pi, batch, &rewards);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let mut d = Direction::from_weights(pi, batch, &centered)?;
    d.mean_weight = mean;
    Ok(d)
}

fn apply<P: Policy>(pi: &mut P, d: &Direction, lr: f64) {
    for (p, g) in pi.params_mut().iter_mut().zip(&d.grad) {
        *p += lr * g;
    }
}

/// Plain ascent step `θ ← θ + α · mean (P/q) ∇ log π`.
pub fn kldpg_step<Pi, Q, A, S>(
    pi: &mut Pi,
    q: &Q,
    ebm: &Ebm<'_, A, S>,
    batch: &[TokenSeq],
    lr: f64,
) -> Result<Direction, TuneError>
where
    Pi: Policy,
    Q: Policy,
    A: Policy,
    S: Scorer + ?Sized,
{
    let d = kldpg_direction(pi, q, ebm, batch)?;
    apply(pi, &d, lr);
    Ok(d)
}

/// Plain ascent step `θ ← θ + α · mean R ∇ log π`, no baseline.
pub fn reinforce_step<Pi, R>(
    pi: &mut Pi,
    reward: R,
    batch: &[TokenSeq],
    lr: f64,
) -> Result<Direction, TuneError>
where
    Pi: Policy,
    R: Fn(&TokenSeq) -> f64,
{
    let d = reinforce_direction(pi, reward, batch, false)?;
    apply(pi, &d, lr);
    Ok(d)
}
