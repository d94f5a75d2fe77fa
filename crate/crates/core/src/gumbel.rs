//! Differentiable word-count sampling.
//!
//! A Poisson count is truncated to `{0, .., n-1}` (the last outcome absorbs
//! the tail mass), then relaxed with the Gumbel-softmax trick so that the
//! soft count `z = Σ_i w_i · i` is differentiable in the Poisson rate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{log_factorials, Scalar};

/// Rates are floored here before taking logs in the soft-count path.
pub const LAMBDA_FLOOR: f64 = 1e-8;

/// Log-probabilities of impossible outcomes are floored here.
pub const LOG_PROB_FLOOR: f64 = -1e30;

/// Default truncation level.
pub const DEFAULT_TRUNCATION: usize = 8;

/// Poisson(λ) restricted to `0..n`, tail mass folded into outcome `n-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPoissonPmf<T> {
    lambda: T,
    probs: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Scalar> TruncatedPoissonPmf<T> {
    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Natural-log probabilities; `-inf` for impossible outcomes.
    pub fn log_probs(&self) -> &[T] {
        &self.log_probs
    }

    pub fn truncation(&self) -> usize {
        self.probs.len()
    }

    /// `Σ_k k·π_k`.
    pub fn mean(&self) -> T {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, &p)| T::c(k as f64) * p)
            .sum()
    }
}

/// Fill `out` with `ln π_i` and return `d ln π_{n-1} / dλ`.
///
/// Head terms are evaluated in log space. The tail bucket is `1 - Σ head`
/// when that difference is well conditioned, otherwise its series is summed
/// directly so small tails keep full relative precision.
fn log_pmf_into<T: Scalar>(lambda: T, log_fact: &[T], out: &mut [T]) -> T {
    let n = out.len();
    debug_assert!(n >= 2 && log_fact.len() >= n);
    if lambda <= T::zero() {
        out[0] = T::zero();
        for o in out[1..].iter_mut() {
            *o = T::neg_infinity();
        }
        return T::zero();
    }
    let ln_lambda = lambda.ln();
    let mut head = T::zero();
    for i in 0..n - 1 {
        out[i] = T::c(i as f64) * ln_lambda - lambda - log_fact[i];
        head += out[i].exp();
    }
    let log_tail = if head <= T::c(0.5) {
        (T::one() - head).max(T::zero()).ln()
    } else {
        // Σ_{j ≥ n-1} λ^j e^{-λ} / j! relative to its first term; ratios of
        // consecutive terms are λ / (j + 1).
        let first = T::c((n - 1) as f64) * ln_lambda - lambda - log_fact[n - 1];
        let eps = T::c(1e-17);
        let mut term = T::one();
        let mut sum = T::one();
        let mut j = n - 1;
        for _ in 0..100_000 {
            j += 1;
            term *= lambda / T::c(j as f64);
            sum += term;
            if T::c(j as f64) > lambda && term < eps * sum {
                break;
            }
        }
        first + sum.ln()
    };
    out[n - 1] = log_tail;
    if log_tail == T::neg_infinity() {
        T::zero()
    } else {
        (out[n - 2] - log_tail).exp()
    }
}

pub fn truncated_pmf<T: Scalar>(lambda: T, n: usize) -> Result<TruncatedPoissonPmf<T>> {
    if n < 2 {
        return Err(Error::validation(format!("truncation must be at least 2, got {n}")));
    }
    if !lambda.is_finite() || lambda < T::zero() {
        return Err(Error::validation(format!("Poisson rate must be finite and >= 0, got {lambda}")));
    }
    let log_fact = log_factorials::<T>(n);
    let mut log_probs = vec![T::zero(); n];
    log_pmf_into(lambda, &log_fact, &mut log_probs);
    let probs: Vec<T> = log_probs.iter().map(|lp| lp.exp()).collect();
    Ok(TruncatedPoissonPmf {
        lambda,
        probs,
        log_probs,
    })
}

/// One relaxed categorical draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCount<T> {
    pub weights: Vec<T>,
    pub value: T,
    pub tau: T,
}

/// Standard Gumbel noise `-ln(-ln u)`, `u ~ U(0,1)`.
pub fn gumbel_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    T::c(-(-u.ln()).ln())
}

fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// `w = softmax((g + ln π) / τ)`, `z = Σ_i w_i·i` for given Gumbel noise.
pub fn relaxed_count<T: Scalar>(pmf: &TruncatedPoissonPmf<T>, gumbel: &[T], tau: T) -> SoftCount<T> {
    let floor = T::c(LOG_PROB_FLOOR);
    let logits: Vec<T> = pmf
        .log_probs
        .iter()
        .zip(gumbel)
        .map(|(&lp, &g)| (g + lp.max(floor)) / tau)
        .collect();
    let mut weights = vec![T::zero(); logits.len()];
    softmax_into(&logits, &mut weights);
    let value = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| T::c(i as f64) * w)
        .sum();
    SoftCount { weights, value, tau }
}

pub fn gumbel_softmax_draw<T: Scalar, R: Rng + ?Sized>(
    pmf: &TruncatedPoissonPmf<T>,
    tau: T,
    rng: &mut R,
) -> SoftCount<T> {
    let g: Vec<T> = (0..pmf.truncation()).map(|_| gumbel_noise(rng)).collect();
    relaxed_count(pmf, &g, tau)
}

/// Reusable soft-count evaluator for the training hot loop: no allocation
/// per call and returns `dz/dλ` alongside `z`.
#[derive(Debug, Clone)]
pub struct SoftCounter<T> {
    tau: T,
    log_fact: Vec<T>,
    outcomes: Vec<T>,
}

/// Per-thread scratch for [`SoftCounter`].
#[derive(Debug, Clone)]
pub struct SoftScratch<T> {
    log_probs: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> SoftCounter<T> {
    pub fn new(truncation: usize, tau: T) -> Result<Self> {
        if truncation < 2 {
            return Err(Error::validation(format!("truncation must be at least 2, got {truncation}")));
        }
        if !(tau > T::zero()) {
            return Err(Error::validation(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self {
            tau,
            log_fact: log_factorials(truncation),
            outcomes: (0..truncation).map(|i| T::c(i as f64)).collect(),
        })
    }

    pub fn truncation(&self) -> usize {
        self.outcomes.len()
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn scratch(&self) -> SoftScratch<T> {
        SoftScratch {
            log_probs: vec![T::zero(); self.truncation()],
            weights: vec![T::zero(); self.truncation()],
        }
    }

    /// Soft count for rate `lambda` (floored at [`LAMBDA_FLOOR`]) and its
    /// derivative in `lambda` with the Gumbel noise held fixed.
    #[inline]
    pub fn eval(&self, lambda: T, gumbel: &[T], scratch: &mut SoftScratch<T>) -> (T, T) {
        let n = self.truncation();
        let floor = T::c(LAMBDA_FLOOR);
        let floored = !(lambda > floor);
        let lam = if floored { floor } else { lambda };
        let dlog_tail = log_pmf_into(lam, &self.log_fact, &mut scratch.log_probs);
        let lp_floor = T::c(LOG_PROB_FLOOR);
        let mut max = T::neg_infinity();
        for i in 0..n {
            let a = (gumbel[i] + scratch.log_probs[i].max(lp_floor)) / self.tau;
            scratch.weights[i] = a;
            max = max.max(a);
        }
        let mut s = T::zero();
        for w in scratch.weights.iter_mut() {
            *w = (*w - max).exp();
            s += *w;
        }
        let mut z = T::zero();
        for (w, &o) in scratch.weights.iter_mut().zip(&self.outcomes) {
            *w /= s;
            z += *w * o;
        }
        if floored {
            return (z, T::zero());
        }
        let inv_lam = T::one() / lam;
        let mut dz = T::zero();
        for i in 0..n - 1 {
            let dlp = self.outcomes[i] * inv_lam - T::one();
            dz += scratch.weights[i] * (self.outcomes[i] - z) * dlp;
        }
        dz += scratch.weights[n - 1] * (self.outcomes[n - 1] - z) * dlog_tail;
        (z, dz / self.tau)
    }
}

/// Independent relaxed draws for every term of one document.
///
/// Rates below [`LAMBDA_FLOOR`] are floored. Noise is drawn term by term,
/// outcome by outcome, from `rng`.
pub fn soft_document<T: Scalar, R: Rng + ?Sized>(
    lambda_d: &[T],
    tau: T,
    truncation: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    let counter = SoftCounter::new(truncation, tau)?;
    let mut scratch = counter.scratch();
    let mut g = vec![T::zero(); truncation];
    Ok(lambda_d
        .iter()
        .map(|&l| {
            for gi in g.iter_mut() {
                *gi = gumbel_noise(rng);
            }
            counter.eval(l, &g, &mut scratch).0
        })
        .collect())
}
