//! Training objective `-ELBO + λ(L_s + L_a)` with its pathwise gradient.
//!
//! The forward and backward passes are fused and run brand by brand: every
//! document of brand `b` shares `E±_kv = exp(±x_b η_kv)`, so the per-brand
//! sums `H±_kv = Σ_{d∈b} θ_dk ∂Loss/∂λ±_dv` carry everything β, η and x
//! need. Only `O(K·V)` scratch is live at any time.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::gumbel::{gumbel_noise, relaxed_count, truncated_pmf, SoftCounter, LAMBDA_FLOOR};
use crate::model::{
    batch_scale, elbo_scaled, polar_exp, rate, ElboBreakdown, Noise, PriorSpec, ReparamSample,
    VariationalParams, POLAR_EXP_CLAMP,
};
use crate::scalar::Scalar;
use crate::sentiment::{cross_entropy, cross_entropy_grad, SentimentClassifier, NUM_CLASSES};

/// Model-side settings of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings<T> {
    pub priors: PriorSpec<T>,
    pub tau: T,
    pub truncation: usize,
    /// Feed `z / Σ_v z_v` to the classifier instead of raw soft counts.
    pub normalize_soft_counts: bool,
    /// Hold η and x at their locations: no noise, no gradient.
    pub freeze_polarity: bool,
    /// Number of TRAIN documents, for the stochastic-VI scale.
    pub num_train: usize,
}

impl<T: Scalar> ObjectiveSettings<T> {
    pub fn new(num_train: usize) -> Self {
        Self {
            priors: PriorSpec::default(),
            tau: T::one(),
            truncation: crate::gumbel::DEFAULT_TRUNCATION,
            normalize_soft_counts: false,
            freeze_polarity: false,
            num_train,
        }
    }
}

/// `Loss = -elbo·ELBO + supervised·L_s + adversarial·L_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub elbo: T,
    pub supervised: T,
    pub adversarial: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn from_lambda(lambda: T) -> Self {
        Self {
            elbo: T::one(),
            supervised: lambda,
            adversarial: lambda,
        }
    }
}

/// All randomness of one step: the reparameterization noise and the seed of
/// the per-slot Gumbel streams.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise<T> {
    pub reparam: Noise<T>,
    pub gumbel_seed: u64,
}

impl<T: Scalar> StepNoise<T> {
    pub fn draw<R: Rng + ?Sized>(params: &VariationalParams<T>, batch_len: usize, rng: &mut R) -> Self {
        let reparam = Noise::draw(params.dims(), batch_len, rng);
        let gumbel_seed = rng.random();
        Self { reparam, gumbel_seed }
    }
}

/// Gumbel stream of batch slot `slot`: noise for term `v`, outcome `i` is the
/// `(v·n + i)`-th draw.
pub fn slot_gumbel_rng(gumbel_seed: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(gumbel_seed);
    rng.set_stream(slot as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub elbo: ElboBreakdown<T>,
    /// Mean supervised cross-entropy over the batch.
    pub supervised: T,
    /// Mean cross-entropy of reversed documents against flipped labels.
    pub adversarial: T,
    pub total: T,
    /// Number of `x·η` exponents that hit the clamp (both signs).
    pub saturated: usize,
}

impl<T: Scalar> LossBreakdown<T> {
    fn new(elbo: ElboBreakdown<T>, supervised: T, adversarial: T, w: &LossWeights<T>, saturated: usize) -> Self {
        let total = -w.elbo * elbo.total() + w.supervised * supervised + w.adversarial * adversarial;
        Self {
            elbo,
            supervised,
            adversarial,
            total,
            saturated,
        }
    }
}

/// Gradient of the loss. θ rows follow the batch slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub theta_loc: Array2<T>,
    pub theta_scale_raw: Array2<T>,
    pub beta_loc: Array2<T>,
    pub beta_scale_raw: Array2<T>,
    pub eta_loc: Array2<T>,
    pub eta_scale_raw: Array2<T>,
    pub x_loc: Array1<T>,
    pub x_scale_raw: Array1<T>,
    pub clf_weights: Array2<T>,
    pub clf_bias: Array1<T>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros(batch_len: usize, k: usize, v: usize, b: usize) -> Self {
        Self {
            theta_loc: Array2::zeros((batch_len, k)),
            theta_scale_raw: Array2::zeros((batch_len, k)),
            beta_loc: Array2::zeros((k, v)),
            beta_scale_raw: Array2::zeros((k, v)),
            eta_loc: Array2::zeros((k, v)),
            eta_scale_raw: Array2::zeros((k, v)),
            x_loc: Array1::zeros(b),
            x_scale_raw: Array1::zeros(b),
            clf_weights: Array2::zeros((NUM_CLASSES, v)),
            clf_bias: Array1::zeros(NUM_CLASSES),
        }
    }

    pub fn slices(&self) -> [&[T]; 10] {
        [
            self.theta_loc.as_slice().unwrap(),
            self.theta_scale_raw.as_slice().unwrap(),
            self.beta_loc.as_slice().unwrap(),
            self.beta_scale_raw.as_slice().unwrap(),
            self.eta_loc.as_slice().unwrap(),
            self.eta_scale_raw.as_slice().unwrap(),
            self.x_loc.as_slice().unwrap(),
            self.x_scale_raw.as_slice().unwrap(),
            self.clf_weights.as_slice().unwrap(),
            self.clf_bias.as_slice().unwrap(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [T]; 10] {
        [
            self.theta_loc.as_slice_mut().unwrap(),
            self.theta_scale_raw.as_slice_mut().unwrap(),
            self.beta_loc.as_slice_mut().unwrap(),
            self.beta_scale_raw.as_slice_mut().unwrap(),
            self.eta_loc.as_slice_mut().unwrap(),
            self.eta_scale_raw.as_slice_mut().unwrap(),
            self.x_loc.as_slice_mut().unwrap(),
            self.x_scale_raw.as_slice_mut().unwrap(),
            self.clf_weights.as_slice_mut().unwrap(),
            self.clf_bias.as_slice_mut().unwrap(),
        ]
    }

    /// Global Euclidean norm over every tensor.
    pub fn norm(&self) -> T {
        self.slices()
            .iter()
            .map(|s| s.iter().map(|&g| g * g).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, f: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= f);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|g| g.is_finite()))
    }
}

fn effective_noise<T: Scalar>(noise: &Noise<T>, settings: &ObjectiveSettings<T>) -> Noise<T> {
    let mut n = noise.clone();
    if settings.freeze_polarity {
        n.eta.fill(T::zero());
        n.x.fill(T::zero());
    }
    n
}

fn check_batch<T: Scalar>(
    params: &VariationalParams<T>,
    clf: &SentimentClassifier<T>,
    corpus: &Corpus,
    docs: &[usize],
    noise: &Noise<T>,
) -> Result<()> {
    let dims = params.dims();
    if docs.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    if corpus.num_docs() != dims.docs {
        return Err(Error::DimensionMismatch {
            axis: "document",
            expected: dims.docs,
            found: corpus.num_docs(),
        });
    }
    if corpus.num_terms() != dims.terms || clf.num_terms() != dims.terms {
        return Err(Error::DimensionMismatch {
            axis: "term",
            expected: dims.terms,
            found: corpus.num_terms().min(clf.num_terms()),
        });
    }
    if corpus.num_brands() != dims.brands {
        return Err(Error::DimensionMismatch {
            axis: "brand",
            expected: dims.brands,
            found: corpus.num_brands(),
        });
    }
    if noise.theta.nrows() != docs.len() {
        return Err(Error::DimensionMismatch {
            axis: "batch",
            expected: docs.len(),
            found: noise.theta.nrows(),
        });
    }
    if let Some(&d) = docs.iter().find(|&&d| d >= dims.docs) {
        return Err(Error::validation(format!("document {d} out of range")));
    }
    Ok(())
}

/// Classifier input and the map from its gradient back to `z`.
fn classifier_input<T: Scalar>(z: &[T], normalize: bool) -> (Vec<T>, T) {
    if !normalize {
        return (z.to_vec(), T::one());
    }
    let s: T = z.iter().copied().sum();
    if s > T::zero() {
        (z.iter().map(|&v| v / s).collect(), s)
    } else {
        (vec![T::zero(); z.len()], T::zero())
    }
}

/// Pull `g = ∂L/∂ẑ` back through `ẑ = z / Σz` in place.
fn normalize_backward<T: Scalar>(g: &mut [T], zhat: &[T], s: T) {
    if s == T::zero() {
        g.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let dot: T = g.iter().zip(zhat).map(|(&a, &b)| a * b).sum();
    for v in g.iter_mut() {
        *v = (*v - dot) / s;
    }
}

/// Soft documents of one batch slot under `x_b` and `-x_b` using the
/// reference sampler path.
pub fn soft_pair<T: Scalar>(
    theta_j: ArrayView1<T>,
    sample: &ReparamSample<T>,
    x_b: T,
    tau: T,
    truncation: usize,
    gumbel_seed: u64,
    slot: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut rng = slot_gumbel_rng(gumbel_seed, slot);
    let lam = rate(theta_j, sample.beta.view(), sample.eta.view(), x_b).values;
    let lam_rev = rate(theta_j, sample.beta.view(), sample.eta.view(), -x_b).values;
    let floor = T::c(LAMBDA_FLOOR);
    let mut z = Vec::with_capacity(lam.len());
    let mut z_rev = Vec::with_capacity(lam.len());
    for v in 0..lam.len() {
        let g: Vec<T> = (0..truncation).map(|_| gumbel_noise(&mut rng)).collect();
        z.push(relaxed_count(&truncated_pmf(lam[v].max(floor), truncation)?, &g, tau).value);
        z_rev.push(relaxed_count(&truncated_pmf(lam_rev[v].max(floor), truncation)?, &g, tau).value);
    }
    Ok((z, z_rev))
}

/// Value-only `(L_s, L_a)` for a batch, built from the reference rate and
/// sampler functions.
pub fn sentiment_losses<T: Scalar>(
    params: &VariationalParams<T>,
    clf: &SentimentClassifier<T>,
    corpus: &Corpus,
    docs: &[usize],
    noise: &StepNoise<T>,
    settings: &ObjectiveSettings<T>,
) -> Result<(T, T)> {
    check_batch(params, clf, corpus, docs, &noise.reparam)?;
    let sample = ReparamSample::from_noise(params, docs, effective_noise(&noise.reparam, settings));
    let mut ls = T::zero();
    let mut la = T::zero();
    for (j, &d) in docs.iter().enumerate() {
        let x_b = sample.x[corpus.brand_of(d)];
        let (z, z_rev) = soft_pair(
            sample.theta.row(j),
            &sample,
            x_b,
            settings.tau,
            settings.truncation,
            noise.gumbel_seed,
            j,
        )?;
        let (zi, _) = classifier_input(&z, settings.normalize_soft_counts);
        let (zr, _) = classifier_input(&z_rev, settings.normalize_soft_counts);
        let label = corpus.label(d);
        ls += cross_entropy(clf.logits(&zi), label);
        la += cross_entropy(clf.logits(&zr), label.flip());
    }
    let n = T::c(docs.len() as f64);
    Ok((ls / n, la / n))
}

/// Value-only loss: [`elbo_scaled`] plus [`sentiment_losses`].
pub fn loss_value<T: Scalar>(
    params: &VariationalParams<T>,
    clf: &SentimentClassifier<T>,
    corpus: &Corpus,
    docs: &[usize],
    noise: &StepNoise<T>,
    settings: &ObjectiveSettings<T>,
    weights: &LossWeights<T>,
) -> Result<LossBreakdown<T>> {
    check_batch(params, clf, corpus, docs, &noise.reparam)?;
    let sample = ReparamSample::from_noise(params, docs, effective_noise(&noise.reparam, settings));
    let scale = batch_scale(settings.num_train, docs.len());
    let elbo = elbo_scaled(params, &settings.priors, corpus, &sample, scale)?;
    let (ls, la) = sentiment_losses(params, clf, corpus, docs, noise, settings)?;
    Ok(LossBreakdown::new(elbo, ls, la, weights, 0))
}

/// Per-slot results of the fused pass.
struct SlotOut<T> {
    /// `∂Loss/∂λ+_v` minus the dense `w_e·S` part, which is added per brand.
    g_pos: Vec<T>,
    g_neg: Vec<T>,
    /// `∂Loss/∂θ_k` of the sample.
    dtheta: Vec<T>,
    ce: T,
    ce_rev: T,
    /// `softmax - onehot`, already multiplied by the loss weight over |batch|.
    resid: [T; NUM_CLASSES],
    resid_rev: [T; NUM_CLASSES],
    zhat: Vec<T>,
    zhat_rev: Vec<T>,
}

struct BrandFactors<T> {
    /// `β_kv·exp(x_b η_kv)` and `β_kv·exp(-x_b η_kv)`.
    be_pos: Array2<T>,
    be_neg: Array2<T>,
    /// `Σ_v be_pos[k, v]`.
    totals: Vec<T>,
    saturated: usize,
}

fn brand_factors<T: Scalar>(beta: &Array2<T>, eta: &Array2<T>, x_b: T) -> BrandFactors<T> {
    let mut be_pos = beta.clone();
    let mut be_neg = beta.clone();
    let mut saturated = 0;
    ndarray::Zip::from(&mut be_pos)
        .and(&mut be_neg)
        .and(eta)
        .for_each(|p, n, &e| {
            let (ep, ok) = polar_exp(x_b * e);
            let (en, _) = polar_exp(-x_b * e);
            saturated += 2 * usize::from(!ok);
            *p *= ep;
            *n *= en;
        });
    let totals = be_pos.outer_iter().map(|r| r.sum()).collect();
    BrandFactors {
        be_pos,
        be_neg,
        totals,
        saturated,
    }
}

#[allow(clippy::too_many_arguments)]
fn slot_pass<T: Scalar>(
    slot: usize,
    d: usize,
    theta_j: ArrayView1<T>,
    f: &BrandFactors<T>,
    clf: &SentimentClassifier<T>,
    corpus: &Corpus,
    counter: &SoftCounter<T>,
    gumbel_seed: u64,
    settings: &ObjectiveSettings<T>,
    w: &LossWeights<T>,
    scale: T,
    inv_batch: T,
) -> SlotOut<T> {
    let (k, v) = f.be_pos.dim();
    let n = counter.truncation();
    let mut lam = vec![T::zero(); v];
    let mut lam_rev = vec![T::zero(); v];
    for t in 0..k {
        let th = theta_j[t];
        let (rp, rn) = (f.be_pos.row(t), f.be_neg.row(t));
        let (rp, rn) = (rp.as_slice().unwrap(), rn.as_slice().unwrap());
        for i in 0..v {
            lam[i] += th * rp[i];
            lam_rev[i] += th * rn[i];
        }
    }

    let mut rng = slot_gumbel_rng(gumbel_seed, slot);
    let mut scratch = counter.scratch();
    let mut g = vec![T::zero(); n];
    let mut z = vec![T::zero(); v];
    let mut z_rev = vec![T::zero(); v];
    let mut dz = vec![T::zero(); v];
    let mut dz_rev = vec![T::zero(); v];
    for i in 0..v {
        for gi in g.iter_mut() {
            *gi = gumbel_noise(&mut rng);
        }
        (z[i], dz[i]) = counter.eval(lam[i], &g, &mut scratch);
        (z_rev[i], dz_rev[i]) = counter.eval(lam_rev[i], &g, &mut scratch);
    }

    let label = corpus.label(d);
    let flipped = label.flip();
    let (zhat, s) = classifier_input(&z, settings.normalize_soft_counts);
    let (zhat_rev, s_rev) = classifier_input(&z_rev, settings.normalize_soft_counts);
    let logits = clf.logits(&zhat);
    let logits_rev = clf.logits(&zhat_rev);
    let ws = w.supervised * inv_batch;
    let wa = w.adversarial * inv_batch;
    let resid = cross_entropy_grad(logits, label).map(|r| r * ws);
    let resid_rev = cross_entropy_grad(logits_rev, flipped).map(|r| r * wa);

    // ∂Loss/∂ẑ = Wᵀ resid, then back through normalization and the sampler.
    let mut g_pos = vec![T::zero(); v];
    let mut g_neg = vec![T::zero(); v];
    for c in 0..NUM_CLASSES {
        let row = clf.weights.row(c);
        let row = row.as_slice().unwrap();
        for i in 0..v {
            g_pos[i] += resid[c] * row[i];
            g_neg[i] += resid_rev[c] * row[i];
        }
    }
    if settings.normalize_soft_counts {
        normalize_backward(&mut g_pos, &zhat, s);
        normalize_backward(&mut g_neg, &zhat_rev, s_rev);
    }
    for i in 0..v {
        g_pos[i] *= dz[i];
        g_neg[i] *= dz_rev[i];
    }

    // Observed part of -w_e·S·(Σ c ln λ - Σ λ).
    let (terms, counts) = corpus.doc(d);
    let we_s = w.elbo * scale;
    for (&t, &c) in terms.iter().zip(counts) {
        let t = t as usize;
        g_pos[t] -= we_s * T::c(c as f64) / lam[t];
    }

    let mut dtheta = vec![T::zero(); k];
    for (t, dt) in dtheta.iter_mut().enumerate() {
        let (rp, rn) = (f.be_pos.row(t), f.be_neg.row(t));
        let (rp, rn) = (rp.as_slice().unwrap(), rn.as_slice().unwrap());
        let mut acc = we_s * f.totals[t];
        for i in 0..v {
            acc += g_pos[i] * rp[i] + g_neg[i] * rn[i];
        }
        *dt = acc;
    }

    SlotOut {
        g_pos,
        g_neg,
        dtheta,
        ce: cross_entropy(logits, label),
        ce_rev: cross_entropy(logits_rev, flipped),
        resid,
        resid_rev,
        zhat,
        zhat_rev,
    }
}

/// Number of batch slots handed to the thread pool at once.
const SLOT_CHUNK: usize = 32;

/// Loss and gradient for one batch with fixed noise.
pub fn loss_and_gradients<T: Scalar>(
    params: &VariationalParams<T>,
    clf: &SentimentClassifier<T>,
    corpus: &Corpus,
    docs: &[usize],
    noise: &StepNoise<T>,
    settings: &ObjectiveSettings<T>,
    weights: &LossWeights<T>,
) -> Result<(LossBreakdown<T>, Gradients<T>)> {
    check_batch(params, clf, corpus, docs, &noise.reparam)?;
    settings.priors.validate()?;
    let counter = SoftCounter::new(settings.truncation, settings.tau)?;
    let dims = params.dims();
    let (k, v) = (dims.topics, dims.terms);
    let sample = ReparamSample::from_noise(params, docs, effective_noise(&noise.reparam, settings));
    let scale: T = batch_scale(settings.num_train, docs.len());
    let inv_batch = T::one() / T::c(docs.len() as f64);
    let we_s = weights.elbo * scale;

    let elbo = elbo_scaled(params, &settings.priors, corpus, &sample, scale)?;

    let mut grads = Gradients::zeros(docs.len(), k, v, dims.brands);
    // Loss derivatives in ln β, η and x of the sample, before the chain rule.
    let mut d_beta = Array2::<T>::zeros((k, v));
    let mut d_eta = Array2::<T>::zeros((k, v));
    let mut d_x = Array1::<T>::zeros(dims.brands);
    let mut ce_sum = T::zero();
    let mut ce_rev_sum = T::zero();
    let mut saturated = 0;

    let mut by_brand: Vec<Vec<usize>> = vec![Vec::new(); dims.brands];
    for (j, &d) in docs.iter().enumerate() {
        by_brand[corpus.brand_of(d)].push(j);
    }
    let clamp = T::c(POLAR_EXP_CLAMP);
    for (b, slots) in by_brand.iter().enumerate() {
        if slots.is_empty() {
            continue;
        }
        let x_b = sample.x[b];
        let f = brand_factors(&sample.beta, &sample.eta, x_b);
        saturated += f.saturated * slots.len();
        let mut h_pos = Array2::<T>::zeros((k, v));
        let mut h_neg = Array2::<T>::zeros((k, v));
        let mut theta_sum = vec![T::zero(); k];
        for chunk in slots.chunks(SLOT_CHUNK) {
            let outs: Vec<SlotOut<T>> = chunk
                .par_iter()
                .map(|&j| {
                    slot_pass(
                        j,
                        docs[j],
                        sample.theta.row(j),
                        &f,
                        clf,
                        corpus,
                        &counter,
                        noise.gumbel_seed,
                        settings,
                        weights,
                        scale,
                        inv_batch,
                    )
                })
                .collect();
            for (&j, o) in chunk.iter().zip(outs) {
                ce_sum += o.ce;
                ce_rev_sum += o.ce_rev;
                for t in 0..k {
                    let th = sample.theta[[j, t]];
                    theta_sum[t] += th;
                    grads.theta_loc[[j, t]] = o.dtheta[t];
                    let mut hp = h_pos.row_mut(t);
                    let hp = hp.as_slice_mut().unwrap();
                    let mut hn = h_neg.row_mut(t);
                    let hn = hn.as_slice_mut().unwrap();
                    for i in 0..v {
                        hp[i] += th * o.g_pos[i];
                        hn[i] += th * o.g_neg[i];
                    }
                }
                for c in 0..NUM_CLASSES {
                    grads.clf_bias[c] += o.resid[c] + o.resid_rev[c];
                    let mut row = grads.clf_weights.row_mut(c);
                    let row = row.as_slice_mut().unwrap();
                    for i in 0..v {
                        row[i] += o.resid[c] * o.zhat[i] + o.resid_rev[c] * o.zhat_rev[i];
                    }
                }
            }
        }
        // β, η and x through λ± = Σ_k θ_k β_kv exp(±x η_kv).
        let mut gx = T::zero();
        for t in 0..k {
            let dense = we_s * theta_sum[t];
            for i in 0..v {
                let hp = h_pos[[t, i]] + dense;
                let hn = h_neg[[t, i]];
                let bp = f.be_pos[[t, i]];
                let bn = f.be_neg[[t, i]];
                // Derivative in ln β: β·∂(β E)/∂β = β E.
                d_beta[[t, i]] += hp * bp + hn * bn;
                let eta = sample.eta[[t, i]];
                if (x_b * eta).abs() <= clamp {
                    let u = hp * bp - hn * bn;
                    d_eta[[t, i]] += x_b * u;
                    gx += eta * u;
                }
            }
        }
        d_x[b] += gx;
    }

    let n = T::c(docs.len() as f64);
    let breakdown = LossBreakdown::new(elbo, ce_sum / n, ce_rev_sum / n, weights, saturated);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            elbo: breakdown.elbo.total().f64(),
            supervised: breakdown.supervised.f64(),
            adversarial: breakdown.adversarial.f64(),
        });
    }

    // Chain rule to the variational parameters, adding prior and entropy.
    let (m, rate) = (settings.priors.gamma_shape, settings.priors.gamma_rate);
    // `dlog` is the likelihood part of ∂Loss/∂ln v; adds ln p(v) - ln q(v)
    // along ln v = loc + σε.
    let lognormal = |dlog: T, val: T, eps: T, raw: T, w: T| -> (T, T) {
        let dlog = dlog - w * ((m - T::one()) - rate * val + T::one());
        let sigma = raw.softplus();
        let gs = dlog * eps - w / sigma;
        (dlog, gs * raw.sigmoid())
    };
    for (j, &d) in docs.iter().enumerate() {
        for t in 0..k {
            let (gl, gr) = lognormal(
                grads.theta_loc[[j, t]] * sample.theta[[j, t]],
                sample.theta[[j, t]],
                sample.noise.theta[[j, t]],
                params.theta_scale_raw[[d, t]],
                we_s,
            );
            grads.theta_loc[[j, t]] = gl;
            grads.theta_scale_raw[[j, t]] = gr;
        }
    }
    let we = weights.elbo;
    for t in 0..k {
        for i in 0..v {
            let (gl, gr) = lognormal(
                d_beta[[t, i]],
                sample.beta[[t, i]],
                sample.noise.beta[[t, i]],
                params.beta_scale_raw[[t, i]],
                we,
            );
            grads.beta_loc[[t, i]] = gl;
            grads.beta_scale_raw[[t, i]] = gr;
        }
    }
    if !settings.freeze_polarity {
        let normal = |dv: T, val: T, eps: T, raw: T| -> (T, T) {
            let gl = dv + we * val;
            let gs = gl * eps - we / raw.softplus();
            (gl, gs * raw.sigmoid())
        };
        for t in 0..k {
            for i in 0..v {
                let (gl, gr) = normal(
                    d_eta[[t, i]],
                    sample.eta[[t, i]],
                    sample.noise.eta[[t, i]],
                    params.eta_scale_raw[[t, i]],
                );
                grads.eta_loc[[t, i]] = gl;
                grads.eta_scale_raw[[t, i]] = gr;
            }
        }
        for b in 0..dims.brands {
            let (gl, gr) = normal(d_x[b], sample.x[b], sample.noise.x[b], params.x_scale_raw[b]);
            grads.x_loc[b] = gl;
            grads.x_scale_raw[b] = gr;
        }
    }
    Ok((breakdown, grads))
}

/// Count of TRAIN documents.
pub fn num_train_docs(corpus: &Corpus) -> usize {
    corpus.docs_in(Split::Train).count()
}
