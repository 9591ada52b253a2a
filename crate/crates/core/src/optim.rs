//! Gradient-ascent rules on flat parameter vectors, plus global-norm
//! clipping.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Plain ascent: `θ += lr · g`.
    #[default]
    Sgd,
    Adam,
}

/// Stateful update rule selected by [`Optimizer`].
#[derive(Debug, Clone, PartialEq)]
pub enum Stepper {
    Sgd { learning_rate: f64 },
    Adam(Adam),
}

impl Stepper {
    pub fn new(kind: Optimizer, len: usize, learning_rate: f64) -> Self {
        match kind {
            Optimizer::Sgd => Self::Sgd { learning_rate },
            Optimizer::Adam => Self::Adam(Adam::new(len, learning_rate)),
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Self::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += *learning_rate * g;
                }
            }
            Self::Adam(a) => a.ascend(params, grad),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One ascent step along `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p += self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
