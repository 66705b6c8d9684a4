use super::{EncoderParams, GradientTape};

/// Adam optimizer over one parameter set. [`Adam::step`] descends.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: GradientTape,
    v: GradientTape,
}

impl Adam {
    pub fn new(params: &EncoderParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: GradientTape::for_params(params),
            v: GradientTape::for_params(params),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grad: &GradientTape) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (((p, g), m), v) in params
            .groups_mut()
            .into_iter()
            .zip(grad.groups())
            .zip(self.m.groups_mut())
            .zip(self.v.groups_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
