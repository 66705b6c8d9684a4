use super::EncoderParams;

/// Accumulated gradients, laid out exactly like [`EncoderParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub embedding: Vec<f64>,
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
    pub attn_w: Vec<f64>,
    pub attn_b: f64,
}

impl GradientTape {
    pub fn for_params(params: &EncoderParams) -> Self {
        GradientTape {
            embedding: vec![0.0; params.embedding.len()],
            projection: vec![0.0; params.projection.len()],
            bias: vec![0.0; params.bias.len()],
            attn_w: vec![0.0; params.attn_w.len()],
            attn_b: 0.0,
        }
    }

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

    pub fn clear(&mut self) {
        for g in self.groups_mut() {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }
}
