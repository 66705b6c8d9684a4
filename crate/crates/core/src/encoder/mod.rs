//! Trainable message and session encoders.
//!
//! A message is encoded as `tanh(P · mean(E[tokens]) + c)`; a session of
//! message vectors is pooled with additive self-attention
//! `u_j = tanh(w · v_j + b)`, `α = softmax(u)`, `v_T = Σ α_j v_j`.
//! Mean pooling makes the message encoder order-invariant.
//!
//! Backward passes are hand-written; [`Graph`] caches message activations so
//! a batch encodes each distinct message once and backpropagates through it
//! once.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_VERSION};
pub use graph::Graph;
pub use tape::GradientTape;

pub const DEFAULT_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dim: usize,
    pub vocab_size: usize,
    /// `vocab_size × dim`, row-major; row 0 is the unknown token.
    pub embedding: Vec<f64>,
    /// `dim × dim`, row-major (output, input).
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
    pub attn_w: Vec<f64>,
    pub attn_b: f64,
}

#[derive(Clone, Debug)]
pub struct MessageActivation {
    pub mean: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SessionActivation {
    /// `u_j`, the attention scores before the softmax.
    pub scores: Vec<f64>,
    /// `α_j`.
    pub weights: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(x)` clamped to the open unit interval.
pub fn probability(x: f64) -> f64 {
    sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Binary cross-entropy of `σ(logit)` against `label`.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax-weighted sum of `vectors` under attention scores `u`.
pub fn pool_with_scores(vectors: &[&[f64]], scores: Vec<f64>) -> SessionActivation {
    let weights = softmax(&scores);
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; dim];
    for (v, &a) in vectors.iter().zip(&weights) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += a * x;
        }
    }
    SessionActivation {
        scores,
        weights,
        out,
    }
}

impl EncoderParams {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EncoderParams {
            dim,
            vocab_size,
            embedding: vec![0.0; vocab_size * dim],
            projection: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
            attn_w: vec![0.0; dim],
            attn_b: 0.0,
        }
    }

    /// Embeddings uniform in ±0.1, projection and attention vector uniform in
    /// ±1/√dim, biases zero.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EncoderParams::zeros(vocab_size, dim);
        let scale = 1.0 / (dim as f64).sqrt();
        p.embedding
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-0.1..=0.1));
        p.projection
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-scale..=scale));
        p.attn_w
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-scale..=scale));
        p
    }

    pub fn param_count(&self) -> usize {
        self.embedding.len() + self.projection.len() + self.bias.len() + self.attn_w.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Checkpoint("dimension must be positive".into()));
        }
        let shapes = [
            ("embedding", self.embedding.len(), self.vocab_size * self.dim),
            ("projection", self.projection.len(), self.dim * self.dim),
            ("bias", self.bias.len(), self.dim),
            ("attn_w", self.attn_w.len(), self.dim),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Checkpoint(format!("{name}: {got} values, expected {want}")));
            }
        }
        if !self.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Parameter groups in a fixed order: embedding, projection, bias,
    /// attention vector, attention bias.
    pub fn groups(&self) -> [&[f64]; 5] {
        [
            &self.embedding,
            &self.projection,
            &self.bias,
            &self.attn_w,
            std::slice::from_ref(&self.attn_b),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.embedding,
            &mut self.projection,
            &mut self.bias,
            &mut self.attn_w,
            std::slice::from_mut(&mut self.attn_b),
        ]
    }

    fn embedding_row(&self, id: u32) -> &[f64] {
        let id = if (id as usize) < self.vocab_size { id as usize } else { 0 };
        &self.embedding[id * self.dim..(id + 1) * self.dim]
    }

    /// Forward pass for one message. `ids` must be non-empty.
    pub fn message_forward(&self, ids: &[u32]) -> MessageActivation {
        debug_assert!(!ids.is_empty());
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for &id in ids {
            for (m, e) in mean.iter_mut().zip(self.embedding_row(id)) {
                *m += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let out = (0..d)
            .map(|o| (dot(&self.projection[o * d..(o + 1) * d], &mean) + self.bias[o]).tanh())
            .collect();
        MessageActivation { mean, out }
    }

    pub fn encode_message(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty message"));
        }
        Ok(self.message_forward(ids).out)
    }

    /// Self-attention pooling. `vectors` must be non-empty.
    pub fn session_forward(&self, vectors: &[&[f64]]) -> SessionActivation {
        debug_assert!(!vectors.is_empty());
        let scores: Vec<f64> = vectors
            .iter()
            .map(|v| (dot(&self.attn_w, v) + self.attn_b).tanh())
            .collect();
        pool_with_scores(vectors, scores)
    }

    pub fn encode_session(&self, vectors: &[Vec<f64>]) -> Result<SessionActivation> {
        if vectors.is_empty() {
            return Err(Error::invalid("cannot encode an empty session"));
        }
        let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
        Ok(self.session_forward(&refs))
    }

    /// Accumulates parameter gradients of a message given `d_out = ∂L/∂v`.
    pub fn message_backward(
        &self,
        ids: &[u32],
        act: &MessageActivation,
        d_out: &[f64],
        tape: &mut GradientTape,
    ) {
        let d = self.dim;
        let d_pre: Vec<f64> = act
            .out
            .iter()
            .zip(d_out)
            .map(|(v, g)| g * (1.0 - v * v))
            .collect();
        let mut d_mean = vec![0.0; d];
        for (o, &g) in d_pre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            tape.bias[o] += g;
            let row = &self.projection[o * d..(o + 1) * d];
            let grow = &mut tape.projection[o * d..(o + 1) * d];
            for i in 0..d {
                grow[i] += g * act.mean[i];
                d_mean[i] += g * row[i];
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            let id = if (id as usize) < self.vocab_size { id as usize } else { 0 };
            let grow = &mut tape.embedding[id * d..(id + 1) * d];
            for (g, dm) in grow.iter_mut().zip(&d_mean) {
                *g += dm * inv;
            }
        }
    }

    /// Accumulates attention-parameter gradients given `d_out = ∂L/∂v_T` and
    /// returns `∂L/∂v_j` for each member.
    pub fn session_backward(
        &self,
        vectors: &[&[f64]],
        act: &SessionActivation,
        d_out: &[f64],
        tape: &mut GradientTape,
    ) -> Vec<Vec<f64>> {
        let d_alpha: Vec<f64> = vectors.iter().map(|v| dot(d_out, v)).collect();
        let mean_d: f64 = act.weights.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        vectors
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let a = act.weights[j];
                let d_u = a * (d_alpha[j] - mean_d);
                let u = act.scores[j];
                let d_z = d_u * (1.0 - u * u);
                tape.attn_b += d_z;
                for (g, x) in tape.attn_w.iter_mut().zip(v.iter()) {
                    *g += d_z * x;
                }
                d_out
                    .iter()
                    .zip(&self.attn_w)
                    .map(|(g, w)| a * g + d_z * w)
                    .collect()
            })
            .collect()
    }
}
