use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments of one flat tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Bias-corrected update of `params[range]` as update number `t` (1-based).
    pub fn update(&mut self, offset: usize, params: &mut [T], grads: &[T], t: u64, h: &AdamHyper) {
        let b1 = T::c(h.beta1);
        let b2 = T::c(h.beta2);
        let c1 = T::one() - T::c(h.beta1.powf(t as f64));
        let c2 = T::one() - T::c(h.beta2.powf(t as f64));
        let lr = T::c(h.learning_rate);
        let eps = T::c(h.epsilon);
        let m = &mut self.m[offset..offset + grads.len()];
        let v = &mut self.v[offset..offset + grads.len()];
        for i in 0..grads.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
