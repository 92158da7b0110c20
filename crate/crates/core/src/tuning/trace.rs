use serde::{Deserialize, Serialize};

use super::{Method, TuneConfig};
use crate::metrics::{MetricsRecord, CSV_HEADER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub update: usize,
    pub metrics: MetricsRecord,
    pub swapped: bool,
    /// Forward KL of the proposal in effect after this evaluation.
    pub proposal_kl: f64,
    /// The partition estimate used by the swap test.
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    /// Mean pseudoreward `P/q` for KL-DPG, mean reward for Reinforce.
    pub mean_reward: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub method: Method,
    pub evaluations: Vec<Evaluation>,
    pub updates: Vec<UpdateLog>,
    /// Updates at which the proposal was replaced by the current policy.
    pub swaps: Vec<usize>,
    pub clip_events: usize,
    pub wall_clock_secs: f64,
}

/// Leading columns of a trace CSV, before the metric columns.
pub const TRACE_PREFIX: &str = "update,swap,proposal_kl,z";

impl TuneTrace {
    pub fn new(method: Method) -> TuneTrace {
        TuneTrace {
            method,
            evaluations: Vec::new(),
            updates: Vec::new(),
            swaps: Vec::new(),
            clip_events: 0,
            wall_clock_secs: 0.0,
        }
    }

    pub(super) fn record_update(&mut self, log: UpdateLog) {
        if log.clipped {
            self.clip_events += 1;
        }
        self.updates.push(log);
    }

    pub(super) fn record_evaluation(&mut self, e: Evaluation) {
        debug_assert!(self.evaluations.last().is_none_or(|p| p.update < e.update));
        if e.swapped {
            self.swaps.push(e.update);
        }
        self.evaluations.push(e);
    }

    pub fn first(&self) -> Option<&MetricsRecord> {
        self.evaluations.first().map(|e| &e.metrics)
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.evaluations.last().map(|e| &e.metrics)
    }

    pub fn csv_header() -> String {
        format!("{TRACE_PREFIX},{CSV_HEADER}")
    }

    /// One row per evaluation.
    pub fn to_csv(&self) -> String {
        let mut s = Self::csv_header();
        s.push('\n');
        for e in &self.evaluations {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.update,
                u8::from(e.swapped),
                e.proposal_kl,
                e.z,
                e.metrics.csv_row()
            ));
        }
        s
    }

    /// One row per gradient update.
    pub fn updates_csv(&self) -> String {
        let mut s = String::from("update,mean_reward,grad_norm,clipped,lr\n");
        for u in &self.updates {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                u.update,
                u.mean_reward,
                u.grad_norm,
                u8::from(u.clipped),
                u.lr
            ));
        }
        s
    }

    pub fn manifest(&self, config: &TuneConfig) -> TraceManifest {
        TraceManifest {
            config: config.clone(),
            seed: config.seed,
            wall_clock_secs: self.wall_clock_secs,
            clip_events: self.clip_events,
            swaps: self.swaps.clone(),
            evaluations: self.evaluations.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub config: TuneConfig,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub clip_events: usize,
    pub swaps: Vec<usize>,
    pub evaluations: usize,
}
