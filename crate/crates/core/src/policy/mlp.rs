//! Fixed-window neural policy: token embeddings for the last `k` tokens,
//! one tanh hidden layer, softmax output with BOS masked.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NextDist, Policy};
use crate::lang::{TokenId, Vocab};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Context window in tokens.
    pub k: usize,
    /// Embedding width.
    pub d: usize,
    /// Hidden units.
    pub h: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { k: 8, d: 16, h: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Layout {
    fn new(v: usize, c: MlpConfig) -> Layout {
        let emb = 0;
        let w1 = emb + v * c.d;
        let b1 = w1 + c.k * c.d * c.h;
        let w2 = b1 + c.h;
        let b2 = w2 + c.h * v;
        Layout {
            emb,
            w1,
            b1,
            w2,
            b2,
            end: b2 + v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    vocab: Vocab,
    config: MlpConfig,
    layout: Layout,
    theta: Vec<f64>,
}

/// Per-position activations kept for the backward pass.
struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    dist: NextDist,
}

impl MlpPolicy {
    /// Uniform(-1/√fan_in, 1/√fan_in) weights and embeddings, zero biases.
    pub fn new(vocab: Vocab, config: MlpConfig, seed: u64) -> MlpPolicy {
        let v = vocab.len();
        let layout = Layout::new(v, config);
        let mut theta = vec![0.0; layout.end];
        let mut rng = seeded(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for x in &mut theta[range] {
                *x = rng.gen_range(-s..s);
            }
        };
        fill(layout.emb..layout.w1, v);
        fill(layout.w1..layout.b1, config.k * config.d);
        fill(layout.w2..layout.b2, config.h);
        MlpPolicy {
            vocab,
            config,
            layout,
            theta,
        }
    }

    /// Wraps an existing parameter vector; `None` if its length does not match.
    pub fn from_params(vocab: Vocab, config: MlpConfig, theta: Vec<f64>) -> Option<MlpPolicy> {
        let layout = Layout::new(vocab.len(), config);
        (theta.len() == layout.end).then_some(MlpPolicy {
            vocab,
            config,
            layout,
            theta,
        })
    }

    pub fn config(&self) -> MlpConfig {
        self.config
    }

    /// Named parameter blocks as `(name, rows, cols, slice)`, in storage order.
    pub fn named_arrays(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        let (v, c, l) = (self.vocab.len(), self.config, self.layout);
        vec![
            ("embedding", v, c.d, &self.theta[l.emb..l.w1]),
            ("hidden.weight", c.k * c.d, c.h, &self.theta[l.w1..l.b1]),
            ("hidden.bias", 1, c.h, &self.theta[l.b1..l.w2]),
            ("output.weight", c.h, v, &self.theta[l.w2..l.b2]),
            ("output.bias", 1, v, &self.theta[l.b2..l.end]),
        ]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.theta[l.b2..l.end]
    }

    /// Range of parameter indices holding the embedding row of `token`.
    pub fn embedding_range(&self, token: TokenId) -> std::ops::Range<usize> {
        let start = self.layout.emb + token.index() * self.config.d;
        start..start + self.config.d
    }

    /// Window of the last `k` ids of `prefix`, left-padded with BOS.
    fn window(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let k = self.config.k;
        let mut ctx = vec![self.vocab.bos(); k];
        let take = prefix.len().min(k);
        ctx[k - take..].copy_from_slice(&prefix[prefix.len() - take..]);
        ctx
    }

    fn forward(&self, prefix: &[TokenId]) -> Activations {
        let MlpConfig { d, h, .. } = self.config;
        let v = self.vocab.len();
        let l = self.layout;
        let th = &self.theta;

        let mut input = Vec::with_capacity(self.config.k * d);
        for t in self.window(prefix) {
            let row = l.emb + t.index() * d;
            input.extend_from_slice(&th[row..row + d]);
        }

        let mut hidden = th[l.b1..l.w2].to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x != 0.0 {
                let row = &th[l.w1 + i * h..l.w1 + (i + 1) * h];
                for (a, &w) in hidden.iter_mut().zip(row) {
                    *a += x * w;
                }
            }
        }
        for a in &mut hidden {
            *a = a.tanh();
        }

        let mut logits = th[l.b2..l.end].to_vec();
        for (j, &a) in hidden.iter().enumerate() {
            let row = &th[l.w2 + j * v..l.w2 + (j + 1) * v];
            for (z, &w) in logits.iter_mut().zip(row) {
                *z += a * w;
            }
        }
        Activations {
            input,
            hidden,
            dist: NextDist::from_logits(&logits, self.vocab.bos()),
        }
    }
}

impl Policy for MlpPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn next_dist(&self, prefix: &[TokenId]) -> NextDist {
        self.forward(prefix).dist
    }

    fn accumulate_grad(&self, ids: &[TokenId], scale: f64, grad: &mut [f64]) -> f64 {
        let MlpConfig { k, d, h } = self.config;
        let v = self.vocab.len();
        let l = self.layout;
        let th = &self.theta;
        let bos = self.vocab.bos().index();
        let mut logprob = 0.0;
        let mut g_out = vec![0.0; v];
        let mut g_hidden = vec![0.0; h];
        let mut g_input = vec![0.0; k * d];

        for t in 1..ids.len() {
            let act = self.forward(&ids[..t]);
            let y = ids[t].index();
            logprob += act.dist.log_probs[y];

            // d log p_y / d logit = onehot(y) - p, BOS logit is masked out
            for (i, g) in g_out.iter_mut().enumerate() {
                *g = if i == bos {
                    0.0
                } else {
                    scale * (f64::from(u8::from(i == y)) - act.dist.probs[i])
                };
            }
            for (gb, &g) in grad[l.b2..l.end].iter_mut().zip(&g_out) {
                *gb += g;
            }
            for (j, (gh, &a)) in g_hidden.iter_mut().zip(&act.hidden).enumerate() {
                let row = l.w2 + j * v;
                let mut back = 0.0;
                for i in 0..v {
                    grad[row + i] += a * g_out[i];
                    back += th[row + i] * g_out[i];
                }
                *gh = back * (1.0 - a * a);
            }
            for (gb, &g) in grad[l.b1..l.w2].iter_mut().zip(&g_hidden) {
                *gb += g;
            }
            for (i, &x) in act.input.iter().enumerate() {
                let row = l.w1 + i * h;
                let mut back = 0.0;
                for j in 0..h {
                    grad[row + j] += x * g_hidden[j];
                    back += th[row + j] * g_hidden[j];
                }
                g_input[i] = back;
            }
            for (slot, tok) in self.window(&ids[..t]).into_iter().enumerate() {
                let row = l.emb + tok.index() * d;
                for (ge, &g) in grad[row..row + d]
                    .iter_mut()
                    .zip(&g_input[slot * d..(slot + 1) * d])
                {
                    *ge += g;
                }
            }
        }
        logprob
    }
}
