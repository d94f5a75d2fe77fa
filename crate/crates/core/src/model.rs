//! Mean-field variational posterior of the brand-topic model.
//!
//! Word counts follow `c_dv ~ Pois(λ_dv)` with
//! `λ_dv = Σ_k θ_dk · exp(ln β_kv + x_b · η_kv)` where `b` is the brand of
//! document `d`. Positive variables (θ, β) get lognormal factors, the
//! polarity offsets η and brand scores x get normal factors; every scale is
//! `softplus(raw)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x_b · η_kv` is clamped to this magnitude before exponentiation.
pub const POLAR_EXP_CLAMP: f64 = 30.0;

/// Gamma(shape, rate) prior on θ and β; η and x have fixed N(0, 1) priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec<T> {
    pub gamma_shape: T,
    pub gamma_rate: T,
}

impl<T: Scalar> Default for PriorSpec<T> {
    fn default() -> Self {
        Self {
            gamma_shape: T::c(0.3),
            gamma_rate: T::c(0.3),
        }
    }
}

impl<T: Scalar> PriorSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_shape > T::zero() && self.gamma_rate > T::zero())
            || !self.gamma_shape.is_finite()
            || !self.gamma_rate.is_finite()
        {
            return Err(Error::validation(format!(
                "Gamma prior needs positive finite shape and rate, got ({}, {})",
                self.gamma_shape, self.gamma_rate
            )));
        }
        Ok(())
    }

    /// `ln Gamma(v; shape, rate)` evaluated at `ln v`.
    #[inline]
    pub fn gamma_log_density(&self, log_v: T) -> T {
        let (m, n) = (self.gamma_shape, self.gamma_rate);
        m * n.ln() - m.ln_gamma() + (m - T::one()) * log_v - n * log_v.exp()
    }
}

#[inline]
pub fn normal_log_density<T: Scalar>(v: T) -> T {
    -T::c(0.5) * (T::c(2.0) * T::PI()).ln() - T::c(0.5) * v * v
}

/// `ln q(v)` for `v ~ N(loc, scale²)`.
#[inline]
pub fn normal_log_q<T: Scalar>(v: T, loc: T, scale: T) -> T {
    let z = (v - loc) / scale;
    -scale.ln() - T::c(0.5) * (T::c(2.0) * T::PI()).ln() - T::c(0.5) * z * z
}

/// `ln q(v)` for `ln v ~ N(loc, scale²)`, evaluated at `ln v`.
#[inline]
pub fn lognormal_log_q<T: Scalar>(log_v: T, loc: T, scale: T) -> T {
    normal_log_q(log_v, loc, scale) - log_v
}

/// `exp(clamp(u))` and whether `u` was inside the clamp range.
#[inline]
pub fn polar_exp<T: Scalar>(u: T) -> (T, bool) {
    let c = T::c(POLAR_EXP_CLAMP);
    if u > c {
        (c.exp(), false)
    } else if u < -c {
        ((-c).exp(), false)
    } else {
        (u.exp(), true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams<T> {
    /// D×K location of ln θ.
    pub theta_loc: Array2<T>,
    pub theta_scale_raw: Array2<T>,
    /// K×V location of ln β.
    pub beta_loc: Array2<T>,
    pub beta_scale_raw: Array2<T>,
    /// K×V mean of η.
    pub eta_loc: Array2<T>,
    pub eta_scale_raw: Array2<T>,
    /// B means of the brand scores x.
    pub x_loc: Array1<T>,
    pub x_scale_raw: Array1<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub docs: usize,
    pub topics: usize,
    pub terms: usize,
    pub brands: usize,
}

/// Initial scales for a fresh posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScales<T> {
    /// Scale of the lognormal factors of θ and β.
    pub positive: T,
    /// Scale of the normal factors of η and x.
    pub polarity: T,
}

impl<T: Scalar> VariationalParams<T> {
    /// Posterior with the given log-means for θ and β, η and x at their prior
    /// mean of zero.
    pub fn from_log_means(
        theta_log_mean: Array2<T>,
        beta_log_mean: Array2<T>,
        num_brands: usize,
        init: InitScales<T>,
    ) -> Result<Self> {
        let (d, k) = theta_log_mean.dim();
        let (k2, v) = beta_log_mean.dim();
        if k != k2 {
            return Err(Error::DimensionMismatch {
                axis: "topic",
                expected: k,
                found: k2,
            });
        }
        if !(init.positive > T::zero() && init.polarity > T::zero()) {
            return Err(Error::validation("initial scales must be positive"));
        }
        let pos = init.positive.softplus_inv();
        let pol = init.polarity.softplus_inv();
        let p = Self {
            theta_loc: theta_log_mean,
            theta_scale_raw: Array2::from_elem((d, k), pos),
            beta_loc: beta_log_mean,
            beta_scale_raw: Array2::from_elem((k, v), pos),
            eta_loc: Array2::zeros((k, v)),
            eta_scale_raw: Array2::from_elem((k, v), pol),
            x_loc: Array1::zeros(num_brands),
            x_scale_raw: Array1::from_elem(num_brands, pol),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dims(&self) -> Dims {
        let (docs, topics) = self.theta_loc.dim();
        Dims {
            docs,
            topics,
            terms: self.beta_loc.ncols(),
            brands: self.x_loc.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims {
            docs,
            topics,
            terms,
            brands,
        } = self.dims();
        let shapes = [
            ("theta_scale_raw", self.theta_scale_raw.dim(), (docs, topics)),
            ("beta_loc", self.beta_loc.dim(), (topics, terms)),
            ("beta_scale_raw", self.beta_scale_raw.dim(), (topics, terms)),
            ("eta_loc", self.eta_loc.dim(), (topics, terms)),
            ("eta_scale_raw", self.eta_scale_raw.dim(), (topics, terms)),
            ("x_scale_raw", (self.x_scale_raw.len(), 1), (brands, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::validation(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// All eight tensors as flat slices, in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &[T]); 8] {
        [
            ("theta_loc", self.theta_loc.as_slice().unwrap()),
            ("theta_scale_raw", self.theta_scale_raw.as_slice().unwrap()),
            ("beta_loc", self.beta_loc.as_slice().unwrap()),
            ("beta_scale_raw", self.beta_scale_raw.as_slice().unwrap()),
            ("eta_loc", self.eta_loc.as_slice().unwrap()),
            ("eta_scale_raw", self.eta_scale_raw.as_slice().unwrap()),
            ("x_loc", self.x_loc.as_slice().unwrap()),
            ("x_scale_raw", self.x_scale_raw.as_slice().unwrap()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [T]); 8] {
        [
            ("theta_loc", self.theta_loc.as_slice_mut().unwrap()),
            ("theta_scale_raw", self.theta_scale_raw.as_slice_mut().unwrap()),
            ("beta_loc", self.beta_loc.as_slice_mut().unwrap()),
            ("beta_scale_raw", self.beta_scale_raw.as_slice_mut().unwrap()),
            ("eta_loc", self.eta_loc.as_slice_mut().unwrap()),
            ("eta_scale_raw", self.eta_scale_raw.as_slice_mut().unwrap()),
            ("x_loc", self.x_loc.as_slice_mut().unwrap()),
            ("x_scale_raw", self.x_scale_raw.as_slice_mut().unwrap()),
        ]
    }

    /// Copy with the polarity axis reversed: `(x, η) → (-x, -η)`, under which
    /// the likelihood is invariant.
    pub fn sign_flipped(&self) -> Self {
        let mut p = self.clone();
        p.x_loc.mapv_inplace(|v| -v);
        p.eta_loc.mapv_inplace(|v| -v);
        p
    }
}

/// Standard-normal noise behind one reparameterized draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    /// One row per batch slot.
    pub theta: Array2<T>,
    pub beta: Array2<T>,
    pub eta: Array2<T>,
    pub x: Array1<T>,
}

impl<T: Scalar> Noise<T> {
    pub fn draw<R: Rng + ?Sized>(dims: Dims, batch_len: usize, rng: &mut R) -> Self {
        let mut normal = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::c(rng.sample::<f64, _>(StandardNormal))).collect()
        };
        let (k, v) = (dims.topics, dims.terms);
        Self {
            theta: Array2::from_shape_vec((batch_len, k), normal(batch_len * k)).unwrap(),
            beta: Array2::from_shape_vec((k, v), normal(k * v)).unwrap(),
            eta: Array2::from_shape_vec((k, v), normal(k * v)).unwrap(),
            x: Array1::from(normal(dims.brands)),
        }
    }

    pub fn zeros(dims: Dims, batch_len: usize) -> Self {
        Self {
            theta: Array2::zeros((batch_len, dims.topics)),
            beta: Array2::zeros((dims.topics, dims.terms)),
            eta: Array2::zeros((dims.topics, dims.terms)),
            x: Array1::zeros(dims.brands),
        }
    }
}

/// One reparameterized draw from q for a batch of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamSample<T> {
    pub docs: Vec<usize>,
    /// batch×K, row `j` belongs to `docs[j]`.
    pub theta: Array2<T>,
    pub beta: Array2<T>,
    pub eta: Array2<T>,
    pub x: Array1<T>,
    pub noise: Noise<T>,
}

impl<T: Scalar> ReparamSample<T> {
    /// θ = exp(loc + σ ε), β likewise; η = loc + σ ε, x likewise.
    pub fn from_noise(params: &VariationalParams<T>, docs: &[usize], noise: Noise<T>) -> Self {
        let k = params.dims().topics;
        let mut theta = Array2::zeros((docs.len(), k));
        for (j, &d) in docs.iter().enumerate() {
            for t in 0..k {
                let s = params.theta_scale_raw[[d, t]].softplus();
                theta[[j, t]] = (params.theta_loc[[d, t]] + s * noise.theta[[j, t]]).exp();
            }
        }
        let lognormal = |loc: &Array2<T>, raw: &Array2<T>, eps: &Array2<T>| {
            let mut out = loc.clone();
            ndarray::Zip::from(&mut out)
                .and(raw)
                .and(eps)
                .for_each(|o, &r, &e| *o = (*o + r.softplus() * e).exp());
            out
        };
        let normal = |loc: &Array2<T>, raw: &Array2<T>, eps: &Array2<T>| {
            let mut out = loc.clone();
            ndarray::Zip::from(&mut out)
                .and(raw)
                .and(eps)
                .for_each(|o, &r, &e| *o += r.softplus() * e);
            out
        };
        let beta = lognormal(&params.beta_loc, &params.beta_scale_raw, &noise.beta);
        let eta = normal(&params.eta_loc, &params.eta_scale_raw, &noise.eta);
        let mut x = params.x_loc.clone();
        ndarray::Zip::from(&mut x)
            .and(&params.x_scale_raw)
            .and(&noise.x)
            .for_each(|o, &r, &e| *o += r.softplus() * e);
        Self {
            docs: docs.to_vec(),
            theta,
            beta,
            eta,
            x,
            noise,
        }
    }
}

pub fn sample_posterior<T: Scalar, R: Rng + ?Sized>(
    params: &VariationalParams<T>,
    docs: &[usize],
    rng: &mut R,
) -> ReparamSample<T> {
    let noise = Noise::draw(params.dims(), docs.len(), rng);
    ReparamSample::from_noise(params, docs, noise)
}

/// Dense rate vector of one document plus how many `x·η` exponents were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector<T> {
    pub values: Vec<T>,
    pub saturated: usize,
}

/// `λ_v = Σ_k θ_k · exp(ln β_kv + x_b · η_kv)`.
pub fn rate<T: Scalar>(
    theta_d: ArrayView1<T>,
    beta: ArrayView2<T>,
    eta: ArrayView2<T>,
    x_b: T,
) -> RateVector<T> {
    let (k, v) = beta.dim();
    let mut values = vec![T::zero(); v];
    let mut saturated = 0;
    for t in 0..k {
        let th = theta_d[t];
        for (w, out) in values.iter_mut().enumerate() {
            let (e, ok) = polar_exp(x_b * eta[[t, w]]);
            saturated += usize::from(!ok);
            *out += th * beta[[t, w]] * e;
        }
    }
    RateVector { values, saturated }
}

/// Plain Poisson-factorization rate `Σ_k θ_dk β_kv`.
pub fn pf_rate<T: Scalar>(theta_mean: ArrayView2<T>, beta_mean: ArrayView2<T>, d: usize, v: usize) -> T {
    theta_mean
        .row(d)
        .iter()
        .zip(beta_mean.column(v))
        .map(|(&a, &b)| a * b)
        .sum()
}

/// `Σ_v c_v ln λ_v - λ_v`, dropping the parameter-free `ln c!`.
pub fn poisson_loglik<T: Scalar>(terms: &[u32], counts: &[u32], lambda_d: &[T]) -> T {
    let observed: T = terms
        .iter()
        .zip(counts)
        .map(|(&t, &c)| T::c(c as f64) * lambda_d[t as usize].ln())
        .sum();
    let total: T = lambda_d.iter().copied().sum();
    observed - total
}

/// Per-topic totals `T_k = Σ_v β_kv exp(x η_kv)` for one brand score.
pub fn topic_totals<T: Scalar>(beta: ArrayView2<T>, eta: ArrayView2<T>, x_b: T) -> Vec<T> {
    beta.outer_iter()
        .zip(eta.outer_iter())
        .map(|(b, e)| b.iter().zip(e).map(|(&b, &e)| b * polar_exp(x_b * e).0).sum())
        .collect()
}

/// Same value as [`poisson_loglik`] without materializing the dense rate:
/// the `-Σ_v λ_v` term is `-Σ_k θ_k T_k` with `totals` from [`topic_totals`].
pub fn poisson_loglik_factored<T: Scalar>(
    terms: &[u32],
    counts: &[u32],
    theta_d: ArrayView1<T>,
    beta: ArrayView2<T>,
    eta: ArrayView2<T>,
    x_b: T,
    totals: &[T],
) -> T {
    let mut observed = T::zero();
    for (&t, &c) in terms.iter().zip(counts) {
        let v = t as usize;
        let lam: T = (0..theta_d.len())
            .map(|k| theta_d[k] * beta[[k, v]] * polar_exp(x_b * eta[[k, v]]).0)
            .sum();
        observed += T::c(c as f64) * lam.ln();
    }
    let total: T = theta_d.iter().zip(totals).map(|(&a, &b)| a * b).sum();
    observed - total
}

/// One-sample ELBO estimate split into its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown<T> {
    pub log_prior: T,
    pub log_likelihood: T,
    /// `-ln q` at the sample.
    pub entropy: T,
}

impl<T: Scalar> ElboBreakdown<T> {
    pub fn total(&self) -> T {
        self.log_prior + self.log_likelihood + self.entropy
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.total().is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteElbo {
                log_prior: self.log_prior.f64(),
                log_likelihood: self.log_likelihood.f64(),
                entropy: self.entropy.f64(),
            })
        }
    }
}

/// Stochastic-VI scale: TRAIN documents over batch size.
pub fn batch_scale<T: Scalar>(num_train_docs: usize, batch_len: usize) -> T {
    T::c(num_train_docs as f64) / T::c(batch_len as f64)
}

/// One-sample ELBO: `ln p(θ,β,η,x) + ln p(c | ·) - ln q`, where per-document
/// terms (likelihood and θ) are scaled by TRAIN size over batch size.
pub fn elbo<T: Scalar>(
    params: &VariationalParams<T>,
    priors: &PriorSpec<T>,
    corpus: &Corpus,
    sample: &ReparamSample<T>,
) -> Result<ElboBreakdown<T>> {
    let num_train = corpus.docs_in(Split::Train).count();
    elbo_scaled(params, priors, corpus, sample, batch_scale(num_train, sample.docs.len()))
}

pub fn elbo_scaled<T: Scalar>(
    params: &VariationalParams<T>,
    priors: &PriorSpec<T>,
    corpus: &Corpus,
    sample: &ReparamSample<T>,
    scale: T,
) -> Result<ElboBreakdown<T>> {
    let k = params.dims().topics;
    let mut local_prior = T::zero();
    let mut local_entropy = T::zero();
    let mut loglik = T::zero();

    let mut totals_by_brand: Vec<Option<Vec<T>>> = vec![None; params.dims().brands];
    for (j, &d) in sample.docs.iter().enumerate() {
        for t in 0..k {
            let log_th = sample.theta[[j, t]].ln();
            let s = params.theta_scale_raw[[d, t]].softplus();
            local_prior += priors.gamma_log_density(log_th);
            local_entropy -= lognormal_log_q(log_th, params.theta_loc[[d, t]], s);
        }
        let b = corpus.brand_of(d);
        let x_b = sample.x[b];
        let totals = totals_by_brand[b]
            .get_or_insert_with(|| topic_totals(sample.beta.view(), sample.eta.view(), x_b));
        let (terms, counts) = corpus.doc(d);
        loglik += poisson_loglik_factored(
            terms,
            counts,
            sample.theta.row(j),
            sample.beta.view(),
            sample.eta.view(),
            x_b,
            totals,
        );
    }

    let mut global_prior = T::zero();
    let mut global_entropy = T::zero();
    ndarray::Zip::from(&sample.beta)
        .and(&params.beta_loc)
        .and(&params.beta_scale_raw)
        .for_each(|&b, &loc, &raw| {
            let lb = b.ln();
            global_prior += priors.gamma_log_density(lb);
            global_entropy -= lognormal_log_q(lb, loc, raw.softplus());
        });
    ndarray::Zip::from(&sample.eta)
        .and(&params.eta_loc)
        .and(&params.eta_scale_raw)
        .for_each(|&e, &loc, &raw| {
            global_prior += normal_log_density(e);
            global_entropy -= normal_log_q(e, loc, raw.softplus());
        });
    ndarray::Zip::from(&sample.x)
        .and(&params.x_loc)
        .and(&params.x_scale_raw)
        .for_each(|&x, &loc, &raw| {
            global_prior += normal_log_density(x);
            global_entropy -= normal_log_q(x, loc, raw.softplus());
        });

    let out = ElboBreakdown {
        log_prior: global_prior + scale * local_prior,
        log_likelihood: scale * loglik,
        entropy: global_entropy + scale * local_entropy,
    };
    out.check_finite()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_without_brand_term_is_pf_rate() {
        let theta = array![[2.0f64, 0.5]];
        let beta = array![[0.5, 1.0, 3.0], [1.0, 2.0, 0.1]];
        let eta = Array2::from_elem((2, 3), 0.7);
        let r = rate(theta.row(0), beta.view(), eta.view(), 0.0);
        for v in 0..3 {
            assert!((r.values[v] - pf_rate(theta.view(), beta.view(), 0, v)).abs() < 1e-15);
        }
        let r = rate(theta.row(0), beta.view(), Array2::zeros((2, 3)).view(), 1.3);
        for v in 0..3 {
            assert_eq!(r.values[v], pf_rate(theta.view(), beta.view(), 0, v));
        }
    }

    #[test]
    fn rate_single_topic() {
        let r = rate(
            array![1.0f64].view(),
            array![[2.0]].view(),
            array![[1.0]].view(),
            2f64.ln(),
        );
        assert!((r.values[0] - 4.0).abs() < 1e-14);
        assert_eq!(r.saturated, 0);
    }

    #[test]
    fn rate_clamps_huge_exponents() {
        let r = rate(
            array![1.0f64].view(),
            array![[1.0, 1.0]].view(),
            array![[100.0, -100.0]].view(),
            1.0,
        );
        assert_eq!(r.saturated, 2);
        assert!((r.values[0] - 30f64.exp()).abs() / 30f64.exp() < 1e-14);
        assert!(r.values[1] > 0.0);
    }

    #[test]
    fn loglik_edge_cases() {
        let lam = [0.3f64, 1.7, 2.0];
        assert!((poisson_loglik(&[], &[], &lam) + 4.0).abs() < 1e-15);
        assert!((poisson_loglik(&[1], &[1], &[0.0f64, 1.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_scale_limit_is_deterministic() {
        let theta_log = array![[0.3f64, -0.2]];
        let beta_log = array![[0.1, 0.2, 0.3], [-1.0, 0.0, 1.0]];
        let mut p = VariationalParams::from_log_means(
            theta_log.clone(),
            beta_log.clone(),
            1,
            InitScales {
                positive: 1.0,
                polarity: 1.0,
            },
        )
        .unwrap();
        p.theta_scale_raw.fill(-800.0);
        p.beta_scale_raw.fill(-800.0);
        p.eta_scale_raw.fill(-800.0);
        p.x_scale_raw.fill(-800.0);
        p.eta_loc.fill(0.25);
        p.x_loc.fill(-0.5);
        let s = sample_posterior(&p, &[0], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.theta, theta_log.mapv(f64::exp));
        assert_eq!(s.beta, beta_log.mapv(f64::exp));
        assert_eq!(s.eta, Array2::from_elem((2, 3), 0.25));
        assert_eq!(s.x, array![-0.5]);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = VariationalParams::from_log_means(
            Array2::zeros((3, 2)),
            Array2::zeros((2, 4)),
            2,
            InitScales {
                positive: 0.5,
                polarity: 1.0,
            },
        )
        .unwrap();
        let a = sample_posterior(&p, &[0, 2], &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_posterior(&p, &[0, 2], &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }
}
