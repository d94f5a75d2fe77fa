//! Linear three-class sentiment head over soft document representations,
//! with the supervised loss and the reversed-polarity adversarial loss.

use ndarray::{Array1, Array2};

use crate::corpus::Polarity;
use crate::scalar::Scalar;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentClassifier<T> {
    /// 3×V.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> SentimentClassifier<T> {
    /// All-zero head: uniform predictions until trained.
    pub fn zeros(num_terms: usize) -> Self {
        Self {
            weights: Array2::zeros((NUM_CLASSES, num_terms)),
            bias: Array1::zeros(NUM_CLASSES),
        }
    }

    pub fn num_terms(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, z: &[T]) -> [T; NUM_CLASSES] {
        debug_assert_eq!(z.len(), self.num_terms());
        let mut out = [T::zero(); NUM_CLASSES];
        for (c, o) in out.iter_mut().enumerate() {
            let w = self.weights.row(c);
            let w = w.as_slice().unwrap();
            *o = self.bias[c] + w.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>();
        }
        out
    }
}

pub fn softmax3<T: Scalar>(logits: [T; NUM_CLASSES]) -> [T; NUM_CLASSES] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = logits.map(|l| (l - m).exp());
    let s = e[0] + e[1] + e[2];
    e.map(|v| v / s)
}

/// `-ln softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: [T; NUM_CLASSES], label: Polarity) -> T {
    crate::scalar::log_sum_exp(&logits) - logits[label.index()]
}

/// Gradient of [`cross_entropy`] in the logits: `softmax - onehot`.
pub fn cross_entropy_grad<T: Scalar>(logits: [T; NUM_CLASSES], label: Polarity) -> [T; NUM_CLASSES] {
    let mut p = softmax3(logits);
    p[label.index()] -= T::one();
    p
}

pub fn flip_label(label: Polarity) -> Polarity {
    label.flip()
}

/// Soft representations of one document under `x_b` and under `-x_b`,
/// built from the same posterior draw and the same Gumbel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialPair<T> {
    pub z: Vec<T>,
    pub z_rev: Vec<T>,
    pub label: Polarity,
}

impl<T> AdversarialPair<T> {
    pub fn flipped_label(&self) -> Polarity {
        self.label.flip()
    }
}

/// `(CE(z, label), CE(z_rev, flip(label)))`.
pub fn adversarial_losses<T: Scalar>(clf: &SentimentClassifier<T>, pair: &AdversarialPair<T>) -> (T, T) {
    (
        cross_entropy(clf.logits(&pair.z), pair.label),
        cross_entropy(clf.logits(&pair.z_rev), pair.flipped_label()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_gives_bias() {
        let mut clf = SentimentClassifier::<f64>::zeros(4);
        clf.bias = ndarray::array![0.1, -0.2, 0.3];
        clf.weights.fill(2.0);
        assert_eq!(clf.logits(&[0.0; 4]), [0.1, -0.2, 0.3]);
        clf.weights.fill(0.0);
        assert_eq!(clf.logits(&[5.0, 1.0, 2.0, 3.0]), [0.1, -0.2, 0.3]);
    }

    #[test]
    fn logits_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = 17;
        let mut clf = SentimentClassifier::<f64>::zeros(v);
        clf.weights.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        clf.bias.mapv_inplace(|_| rng.random::<f64>());
        let z: Vec<f64> = (0..v).map(|_| rng.random::<f64>() * 3.0).collect();
        let got = clf.logits(&z);
        for c in 0..3 {
            let mut want = clf.bias[c];
            for i in 0..v {
                want += clf.weights[[c, i]] * z[i];
            }
            assert!((got[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let ln3 = 3f64.ln();
        for l in Polarity::ALL {
            assert!((cross_entropy([0.7f64; 3], l) - ln3).abs() < 1e-15);
        }
        let want = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((cross_entropy([1.0f64, 2.0, 3.0], Polarity::Pos) - want).abs() < 1e-15);
        assert!((want - 0.4076).abs() < 1e-4);
        assert!(cross_entropy([0.0f64, 0.0, 800.0], Polarity::Pos) < 1e-300);
        assert!(cross_entropy([0.0f64, 0.0, 800.0], Polarity::Neg).is_finite());
    }

    #[test]
    fn uniform_head_gives_ln3_twice() {
        let clf = SentimentClassifier::<f64>::zeros(3);
        let pair = AdversarialPair {
            z: vec![1.0, 2.0, 0.0],
            z_rev: vec![0.0, 1.0, 4.0],
            label: Polarity::Neg,
        };
        let (s, a) = adversarial_losses(&clf, &pair);
        assert!((s - 3f64.ln()).abs() < 1e-15);
        assert!((a - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_use_flipped_label() {
        let mut clf = SentimentClassifier::<f64>::zeros(2);
        clf.weights = ndarray::array![[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let z = vec![2.0, 1.0];
        let pair = AdversarialPair {
            z: z.clone(),
            z_rev: z,
            label: Polarity::Pos,
        };
        let (s, a) = adversarial_losses(&clf, &pair);
        assert!(s < a);
        assert!((a - cross_entropy(clf.logits(&pair.z), Polarity::Neg)).abs() < 1e-15);
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let logits = [0.3f64, -1.2, 0.8];
        for l in Polarity::ALL {
            let g = cross_entropy_grad(logits, l);
            for c in 0..3 {
                let h = 1e-6;
                let mut up = logits;
                up[c] += h;
                let mut dn = logits;
                dn[c] -= h;
                let fd = (cross_entropy(up, l) - cross_entropy(dn, l)) / (2.0 * h);
                assert!((fd - g[c]).abs() < 1e-8);
            }
        }
    }
}
