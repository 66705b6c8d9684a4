use std::collections::HashMap;
use std::hash::Hash;

use super::{dot, EncoderParams, GradientTape, MessageActivation, SessionActivation};

/// Per-batch computation graph over frozen parameters.
///
/// Messages are registered under a caller-chosen key and encoded once.
/// Upstream gradients with respect to message vectors are pooled per slot and
/// pushed through the message encoder in [`Graph::finish`].
pub struct Graph<'p, K> {
    params: &'p EncoderParams,
    slots: HashMap<K, usize>,
    ids: Vec<Vec<u32>>,
    acts: Vec<MessageActivation>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'p, K: Hash + Eq> Graph<'p, K> {
    pub fn new(params: &'p EncoderParams) -> Self {
        Graph {
            params,
            slots: HashMap::new(),
            ids: Vec::new(),
            acts: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn params(&self) -> &EncoderParams {
        self.params
    }

    /// Slot of the message under `key`, encoding it on first use.
    pub fn message(&mut self, key: K, ids: &[u32]) -> usize {
        if let Some(&slot) = self.slots.get(&key) {
            return slot;
        }
        let slot = self.acts.len();
        self.acts.push(self.params.message_forward(ids));
        self.ids.push(ids.to_vec());
        self.grads.push(None);
        self.slots.insert(key, slot);
        slot
    }

    pub fn vector(&self, slot: usize) -> &[f64] {
        &self.acts[slot].out
    }

    fn members(&self, slots: &[usize]) -> Vec<&[f64]> {
        slots.iter().map(|&s| self.acts[s].out.as_slice()).collect()
    }

    pub fn session(&self, slots: &[usize]) -> SessionActivation {
        self.params.session_forward(&self.members(slots))
    }

    /// `v_T · v_m` for the session over `slots` and candidate `cand`.
    pub fn session_logit(&self, slots: &[usize], cand: usize) -> (f64, SessionActivation) {
        let act = self.session(slots);
        (dot(&act.out, self.vector(cand)), act)
    }

    pub fn pair_logit(&self, a: usize, b: usize) -> f64 {
        dot(self.vector(a), self.vector(b))
    }

    pub fn add_grad(&mut self, slot: usize, d: &[f64], scale: f64) {
        let dim = self.params.dim;
        let g = self.grads[slot].get_or_insert_with(|| vec![0.0; dim]);
        for (acc, x) in g.iter_mut().zip(d) {
            *acc += scale * x;
        }
    }

    /// Backpropagates `∂L/∂v_T = d_out` through the attention pooling.
    pub fn backward_session(
        &mut self,
        slots: &[usize],
        act: &SessionActivation,
        d_out: &[f64],
        tape: &mut GradientTape,
    ) {
        let d_members = self
            .params
            .session_backward(&self.members(slots), act, d_out, tape);
        for (&s, d) in slots.iter().zip(&d_members) {
            self.add_grad(s, d, 1.0);
        }
    }

    /// Backpropagates `g = ∂L/∂x` for `x = v_T · v_cand`.
    pub fn backward_session_logit(
        &mut self,
        slots: &[usize],
        cand: usize,
        act: &SessionActivation,
        g: f64,
        tape: &mut GradientTape,
    ) {
        if g == 0.0 {
            return;
        }
        let d_out: Vec<f64> = self.vector(cand).iter().map(|x| g * x).collect();
        self.add_grad(cand, &act.out.clone(), g);
        self.backward_session(slots, act, &d_out, tape);
    }

    /// Backpropagates `g = ∂L/∂x` for `x = v_a · v_b`.
    pub fn backward_pair_logit(&mut self, a: usize, b: usize, g: f64) {
        if g == 0.0 {
            return;
        }
        let va = self.vector(a).to_vec();
        let vb = self.vector(b).to_vec();
        self.add_grad(a, &vb, g);
        self.add_grad(b, &va, g);
    }

    /// Pushes pooled message gradients into `tape`.
    pub fn finish(self, tape: &mut GradientTape) {
        for ((ids, act), g) in self.ids.iter().zip(&self.acts).zip(&self.grads) {
            if let Some(g) = g {
                self.params.message_backward(ids, act, g, tape);
            }
        }
    }
}
