//! Gamma–Poisson factorization fitted by coordinate-ascent variational
//! inference, used to initialize θ and β of the brand-topic model.
//!
//! Each count is split over topics by multinomial responsibilities
//! `φ_dvk ∝ exp(E[ln θ_dk] + E[ln β_kv])`; shapes collect expected counts and
//! rates collect expected factor sums.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::{write_atomic, BinReader, BinWriter};
use crate::model::{InitScales, PriorSpec, VariationalParams};
use crate::scalar::Scalar;

pub const PF_MAGIC: &[u8; 8] = b"BTMPF\0\0\0";
pub const PF_VERSION: u32 = 1;

/// Gamma variational parameters (shape, rate) of θ (D×K) and β (K×V).
#[derive(Debug, Clone, PartialEq)]
pub struct PFParams<T> {
    pub theta_shape: Array2<T>,
    pub theta_rate: Array2<T>,
    pub beta_shape: Array2<T>,
    pub beta_rate: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions<T> {
    pub topics: usize,
    pub prior: PriorSpec<T>,
    /// Maximum number of full sweeps.
    pub iters: usize,
    /// Stop once the relative change of the log-likelihood at the means
    /// falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl<T: Scalar> PretrainOptions<T> {
    pub fn new(topics: usize) -> Self {
        Self {
            topics,
            prior: PriorSpec::default(),
            iters: 200,
            tol: 1e-5,
            seed: 0,
        }
    }
}

/// Fitted parameters and the log-likelihood at the means after each sweep
/// (entry 0 is the initialization).
#[derive(Debug, Clone)]
pub struct PretrainFit<T> {
    pub params: PFParams<T>,
    pub loglik_trace: Vec<f64>,
}

impl<T: Scalar> PFParams<T> {
    pub fn num_topics(&self) -> usize {
        self.theta_shape.ncols()
    }

    pub fn num_docs(&self) -> usize {
        self.theta_shape.nrows()
    }

    pub fn num_terms(&self) -> usize {
        self.beta_shape.ncols()
    }

    /// Shapes and rates drawn around the prior: `shape = m·(1 + u)`,
    /// `rate = n·(1 + u')` with `u, u' ~ U(0, 1)`.
    pub fn prior_seeded(d: usize, k: usize, v: usize, prior: &PriorSpec<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |base: T, rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| base * (T::one() + T::c(rng.random::<f64>())))
        };
        let theta_shape = jitter(prior.gamma_shape, d, k);
        let theta_rate = jitter(prior.gamma_rate, d, k);
        let beta_shape = jitter(prior.gamma_shape, k, v);
        let beta_rate = jitter(prior.gamma_rate, k, v);
        Self {
            theta_shape,
            theta_rate,
            beta_shape,
            beta_rate,
        }
    }

    pub fn theta_mean(&self) -> Array2<T> {
        &self.theta_shape / &self.theta_rate
    }

    pub fn beta_mean(&self) -> Array2<T> {
        &self.beta_shape / &self.beta_rate
    }

    /// `E[ln θ] = ψ(shape) - ln rate`.
    pub fn theta_log_expectation(&self) -> Array2<T> {
        log_expectation(&self.theta_shape, &self.theta_rate)
    }

    pub fn beta_log_expectation(&self) -> Array2<T> {
        log_expectation(&self.beta_shape, &self.beta_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = self.theta_shape.dim();
        let v = self.beta_shape.ncols();
        for (name, a, want) in [
            ("theta_rate", &self.theta_rate, (d, k)),
            ("beta_shape", &self.beta_shape, (k, v)),
            ("beta_rate", &self.beta_rate, (k, v)),
        ] {
            if a.dim() != want {
                return Err(Error::validation(format!(
                    "{name} has shape {:?}, expected {want:?}",
                    a.dim()
                )));
            }
        }
        for (name, a) in self.named() {
            if a.iter().any(|x| !(x.is_finite() && *x > T::zero())) {
                return Err(Error::validation(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Array2<T>); 4] {
        [
            ("theta_shape", &self.theta_shape),
            ("theta_rate", &self.theta_rate),
            ("beta_shape", &self.beta_shape),
            ("beta_rate", &self.beta_rate),
        ]
    }

    /// Lognormal locations at the log of the Gamma means, all scales at
    /// `init.positive`; η and x start at zero with scale `init.polarity`.
    pub fn to_variational(&self, num_brands: usize, init: InitScales<T>) -> Result<VariationalParams<T>> {
        let theta = self.theta_mean().mapv(|v| v.ln());
        let beta = self.beta_mean().mapv(|v| v.ln());
        VariationalParams::from_log_means(theta, beta, num_brands, init)
    }

    /// Responsibilities of the `K` topics for one observed `(d, v)` entry.
    pub fn responsibilities(&self, d: usize, v: usize) -> Vec<T> {
        let et = log_expectation(
            &self.theta_shape.slice(ndarray::s![d..d + 1, ..]).to_owned(),
            &self.theta_rate.slice(ndarray::s![d..d + 1, ..]).to_owned(),
        );
        let eb = log_expectation(
            &self.beta_shape.slice(ndarray::s![.., v..v + 1]).to_owned(),
            &self.beta_rate.slice(ndarray::s![.., v..v + 1]).to_owned(),
        );
        let mut phi: Vec<T> = (0..self.num_topics()).map(|k| et[[0, k]] + eb[[k, 0]]).collect();
        normalize_log(&mut phi);
        phi
    }

    pub fn write(&self, path: &Path, prior: &PriorSpec<T>) -> Result<()> {
        let mut w = BinWriter::default();
        w.bytes(PF_MAGIC);
        w.u32(PF_VERSION);
        w.str(T::DTYPE);
        w.u64(self.num_topics() as u64);
        w.u64(self.num_docs() as u64);
        w.u64(self.num_terms() as u64);
        w.f64(prior.gamma_shape.f64());
        w.f64(prior.gamma_rate.f64());
        for (_, a) in self.named() {
            w.f64s(a.iter().map(|v| v.f64()));
        }
        write_atomic(path, &w.buf)
    }

    /// Reads a checkpoint written by [`PFParams::write`]; returns the prior
    /// stored in the header too.
    pub fn read(path: &Path) -> Result<(Self, PriorSpec<T>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = BinReader::new(&bytes);
        if r.take(8)? != PF_MAGIC {
            return Err(Error::validation(format!("{}: not a PF checkpoint", path.display())));
        }
        let version = r.u32()?;
        if version != PF_VERSION {
            return Err(Error::validation(format!("unsupported PF checkpoint version {version}")));
        }
        let _dtype = r.str()?;
        let k = r.u64()? as usize;
        let d = r.u64()? as usize;
        let v = r.u64()? as usize;
        let prior = PriorSpec {
            gamma_shape: T::c(r.f64()?),
            gamma_rate: T::c(r.f64()?),
        };
        let mut read = |rows: usize, cols: usize| -> Result<Array2<T>> {
            let vals = r.f64s(rows * cols)?;
            Ok(Array2::from_shape_vec((rows, cols), vals.into_iter().map(T::c).collect()).unwrap())
        };
        let p = Self {
            theta_shape: read(d, k)?,
            theta_rate: read(d, k)?,
            beta_shape: read(k, v)?,
            beta_rate: read(k, v)?,
        };
        r.finish()?;
        p.validate()?;
        Ok((p, prior))
    }
}

fn log_expectation<T: Scalar>(shape: &Array2<T>, rate: &Array2<T>) -> Array2<T> {
    let mut out = shape.mapv(|a| a.digamma());
    out.zip_mut_with(rate, |o, &b| *o -= b.ln());
    out
}

/// In-place softmax of log weights.
fn normalize_log<T: Scalar>(w: &mut [T]) {
    let m = w.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in w.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in w.iter_mut() {
        *x /= s;
    }
}

/// Poisson log-likelihood of the whole corpus at the given means, dropping
/// `ln c!`. The `Σ_dv λ_dv` term factorizes as `Σ_k (Σ_d θ_dk)(Σ_v β_kv)`.
pub fn loglik_at_means<T: Scalar>(corpus: &Corpus, theta: ArrayView2<T>, beta: ArrayView2<T>) -> f64 {
    let k = theta.ncols();
    let observed: f64 = (0..corpus.num_docs())
        .into_par_iter()
        .with_min_len(256)
        .map(|d| {
            let (terms, counts) = corpus.doc(d);
            let mut s = 0.0;
            for (&t, &c) in terms.iter().zip(counts) {
                let lam: f64 = (0..k).map(|j| (theta[[d, j]] * beta[[j, t as usize]]).f64()).sum();
                s += c as f64 * lam.ln();
            }
            s
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let total: f64 = (0..k)
        .map(|j| {
            let a: f64 = theta.column(j).iter().map(|v| v.f64()).sum();
            let b: f64 = beta.row(j).iter().map(|v| v.f64()).sum();
            a * b
        })
        .sum();
    observed - total
}

fn check_positive<T: Scalar>(a: &Array2<T>, name: &str, iteration: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite() && *v > T::zero()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("PF pretraining update of {name}"),
            iteration,
        })
    }
}

/// Term-major copy of the count matrix for the β half-sweep.
struct Csc {
    indptr: Vec<usize>,
    docs: Vec<u32>,
    counts: Vec<u32>,
}

impl Csc {
    fn new(corpus: &Corpus) -> Self {
        let v = corpus.num_terms();
        let mut indptr = vec![0usize; v + 1];
        for d in 0..corpus.num_docs() {
            for &t in corpus.doc(d).0 {
                indptr[t as usize + 1] += 1;
            }
        }
        for i in 0..v {
            indptr[i + 1] += indptr[i];
        }
        let mut fill = indptr.clone();
        let mut docs = vec![0u32; corpus.nnz()];
        let mut counts = vec![0u32; corpus.nnz()];
        for d in 0..corpus.num_docs() {
            let (terms, cs) = corpus.doc(d);
            for (&t, &c) in terms.iter().zip(cs) {
                let slot = &mut fill[t as usize];
                docs[*slot] = d as u32;
                counts[*slot] = c;
                *slot += 1;
            }
        }
        Self { indptr, docs, counts }
    }
}

/// θ half-sweep: new shapes and rates for every document.
fn update_theta<T: Scalar>(corpus: &Corpus, p: &mut PFParams<T>, prior: &PriorSpec<T>) {
    let k = p.num_topics();
    let elog_theta = p.theta_log_expectation();
    let elog_beta = p.beta_log_expectation();
    let beta_sums: Vec<T> = p.beta_mean().outer_iter().map(|r| r.sum()).collect();
    let (m, n) = (prior.gamma_shape, prior.gamma_rate);
    let rows: Vec<Vec<T>> = (0..p.num_docs())
        .into_par_iter()
        .with_min_len(64)
        .map(|d| {
            let mut acc = vec![T::zero(); k];
            let mut phi = vec![T::zero(); k];
            let (terms, counts) = corpus.doc(d);
            for (&t, &c) in terms.iter().zip(counts) {
                for j in 0..k {
                    phi[j] = elog_theta[[d, j]] + elog_beta[[j, t as usize]];
                }
                normalize_log(&mut phi);
                let c = T::c(c as f64);
                for j in 0..k {
                    acc[j] += c * phi[j];
                }
            }
            acc
        })
        .collect();
    for (d, acc) in rows.into_iter().enumerate() {
        for j in 0..k {
            p.theta_shape[[d, j]] = m + acc[j];
            p.theta_rate[[d, j]] = n + beta_sums[j];
        }
    }
}

/// β half-sweep over the term-major view.
fn update_beta<T: Scalar>(csc: &Csc, p: &mut PFParams<T>, prior: &PriorSpec<T>) {
    let k = p.num_topics();
    let v = p.num_terms();
    let elog_theta = p.theta_log_expectation();
    let elog_beta = p.beta_log_expectation();
    let theta_sums: Vec<T> = p.theta_mean().columns().into_iter().map(|c| c.sum()).collect();
    let (m, n) = (prior.gamma_shape, prior.gamma_rate);
    let columns: Vec<Vec<T>> = (0..v)
        .into_par_iter()
        .with_min_len(16)
        .map(|t| {
            let mut acc = vec![T::zero(); k];
            let mut phi = vec![T::zero(); k];
            for i in csc.indptr[t]..csc.indptr[t + 1] {
                let d = csc.docs[i] as usize;
                for j in 0..k {
                    phi[j] = elog_theta[[d, j]] + elog_beta[[j, t]];
                }
                normalize_log(&mut phi);
                let c = T::c(csc.counts[i] as f64);
                for j in 0..k {
                    acc[j] += c * phi[j];
                }
            }
            acc
        })
        .collect();
    for (t, acc) in columns.into_iter().enumerate() {
        for j in 0..k {
            p.beta_shape[[j, t]] = m + acc[j];
            p.beta_rate[[j, t]] = n + theta_sums[j];
        }
    }
}

/// Fits the factorization on every document of `corpus`.
pub fn pretrain<T: Scalar>(corpus: &Corpus, opts: &PretrainOptions<T>) -> Result<PretrainFit<T>> {
    if opts.topics == 0 {
        return Err(Error::validation("number of topics must be at least 1"));
    }
    opts.prior.validate()?;
    let mut p = PFParams::prior_seeded(
        corpus.num_docs(),
        opts.topics,
        corpus.num_terms(),
        &opts.prior,
        opts.seed,
    );
    let mut trace = vec![loglik_at_means(corpus, p.theta_mean().view(), p.beta_mean().view())];
    if opts.iters == 0 {
        return Ok(PretrainFit {
            params: p,
            loglik_trace: trace,
        });
    }
    let csc = Csc::new(corpus);
    for it in 1..=opts.iters {
        update_theta(corpus, &mut p, &opts.prior);
        check_positive(&p.theta_shape, "theta_shape", it)?;
        check_positive(&p.theta_rate, "theta_rate", it)?;
        update_beta(&csc, &mut p, &opts.prior);
        check_positive(&p.beta_shape, "beta_shape", it)?;
        check_positive(&p.beta_rate, "beta_rate", it)?;

        let ll = loglik_at_means(corpus, p.theta_mean().view(), p.beta_mean().view());
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                context: "PF log-likelihood at means".into(),
                iteration: it,
            });
        }
        let prev = *trace.last().unwrap();
        trace.push(ll);
        log::debug!("pf sweep {it}: loglik {ll:.6e}");
        if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < opts.tol {
            break;
        }
    }
    Ok(PretrainFit {
        params: p,
        loglik_trace: trace,
    })
}
