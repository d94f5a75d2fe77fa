//! Stochastic optimization of `-ELBO + λ(L_s + L_a)` starting from a
//! Poisson-factorization fit.
//!
//! Step `s` draws everything it needs from a ChaCha8 stream keyed by
//! `(seed, s)`: the balanced batch, then the reparameterization noise, then
//! the Gumbel seed. A run is therefore fully described by the config, the
//! parameters and the optimizer moments, which is what a checkpoint stores.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml              effective configuration
//! pretrain.pf              Poisson-factorization fit used for initialization
//! train_log.tsv            one line per logged step
//! checkpoints/step-NNNNNNNN.btm
//! final.btm
//! ```

mod adam;
mod checkpoint;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{AdamHyper, Moments};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;

use crate::corpus::{BalancedSampler, Corpus};
use crate::error::{Error, Result};
use crate::model::{InitScales, PriorSpec, VariationalParams};
use crate::objective::{
    loss_and_gradients, num_train_docs, LossBreakdown, LossWeights, ObjectiveSettings, StepNoise,
};
use crate::pf::{pretrain, PFParams, PretrainOptions};
use crate::scalar::Scalar;
use crate::sentiment::SentimentClassifier;

pub const CONFIG_FILE: &str = "config.toml";
pub const PRETRAIN_FILE: &str = "pretrain.pf";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.btm";
pub const LOG_HEADER: &str = "step\telbo\tsupervised\tadversarial\ttotal\twall_seconds";

/// Optimizer state: moments for the eight variational tensors, the classifier
/// weights and bias, plus per-document update counts for the θ rows, which
/// are only touched when their document is in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub moments: Vec<Moments<T>>,
    pub theta_steps: Vec<u64>,
}

impl<T: Scalar> AdamState<T> {
    pub(crate) fn tensor_lengths(params: &VariationalParams<T>) -> Vec<usize> {
        let v = params.dims().terms;
        let mut out: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        out.push(3 * v);
        out.push(3);
        out
    }

    pub fn new(params: &VariationalParams<T>) -> Self {
        Self {
            moments: Self::tensor_lengths(params).into_iter().map(Moments::zeros).collect(),
            theta_steps: vec![0; params.dims().docs],
        }
    }
}

/// Mutable training state besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    /// Completed steps.
    pub step: u64,
    pub adam: AdamState<T>,
    pub last_loss: Option<LossBreakdown<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    /// 1-based index of the step just taken.
    pub step: u64,
    pub loss: LossBreakdown<T>,
    /// Gradient norm before clipping, θ rows aggregated per document.
    pub grad_norm: T,
    pub clipped: bool,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub elbo: f64,
    pub supervised: f64,
    pub adversarial: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

impl LogRow {
    pub fn from_report<T: Scalar>(r: &StepReport<T>, wall_seconds: f64) -> Self {
        Self {
            step: r.step,
            elbo: r.loss.elbo.total().f64(),
            supervised: r.loss.supervised.f64(),
            adversarial: r.loss.adversarial.f64(),
            total: r.loss.total.f64(),
            wall_seconds,
        }
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.3}",
            self.step, self.elbo, self.supervised, self.adversarial, self.total, self.wall_seconds
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::validation(format!("log line has {} fields, expected 6", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::validation(format!("bad number in log: {s}")))
        };
        Ok(Self {
            step: f[0].parse().map_err(|_| Error::validation(format!("bad step in log: {}", f[0])))?,
            elbo: num(f[1])?,
            supervised: num(f[2])?,
            adversarial: num(f[3])?,
            total: num(f[4])?,
            wall_seconds: num(f[5])?,
        })
    }
}

/// Reads a `train_log.tsv` file.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty() && *l != LOG_HEADER)
        .map(LogRow::parse)
        .collect()
}

/// The per-step random stream.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn priors_of<T: Scalar>(cfg: &TrainConfig) -> PriorSpec<T> {
    PriorSpec {
        gamma_shape: T::c(cfg.prior_shape),
        gamma_rate: T::c(cfg.prior_rate),
    }
}

/// Runs the Poisson-factorization pretraining configured by `cfg`.
pub fn pretrain_for<T: Scalar>(corpus: &Corpus, cfg: &TrainConfig) -> Result<PFParams<T>> {
    let opts = PretrainOptions {
        topics: cfg.topics,
        prior: priors_of(cfg),
        iters: cfg.pretrain_iters,
        tol: cfg.pretrain_tol,
        seed: cfg.seed,
    };
    let fit = pretrain(corpus, &opts)?;
    log::info!(
        "pretraining finished after {} sweeps, log-likelihood {:.6e}",
        fit.loglik_trace.len() - 1,
        fit.loglik_trace.last().unwrap()
    );
    Ok(fit.params)
}

pub fn initial_params<T: Scalar>(pf: &PFParams<T>, num_brands: usize, cfg: &TrainConfig) -> Result<VariationalParams<T>> {
    pf.to_variational(
        num_brands,
        InitScales {
            positive: T::c(cfg.init_scale),
            polarity: T::c(cfg.polarity_init_scale),
        },
    )
}

pub struct Trainer<'a, T> {
    corpus: &'a Corpus,
    cfg: TrainConfig,
    sampler: BalancedSampler,
    settings: ObjectiveSettings<T>,
    weights: LossWeights<T>,
    pub params: VariationalParams<T>,
    pub classifier: SentimentClassifier<T>,
    pub state: TrainState<T>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(corpus: &'a Corpus, cfg: TrainConfig, params: VariationalParams<T>) -> Result<Self> {
        let classifier = SentimentClassifier::zeros(params.dims().terms);
        let state = TrainState {
            step: 0,
            adam: AdamState::new(&params),
            last_loss: None,
        };
        Self::assemble(corpus, cfg, params, classifier, state)
    }

    /// Continues from a checkpoint; `cfg` defaults to the embedded config.
    pub fn from_checkpoint(corpus: &'a Corpus, ckpt: Checkpoint<T>, cfg: Option<TrainConfig>) -> Result<Self> {
        let cfg = cfg
            .or(ckpt.config)
            .ok_or_else(|| Error::validation("checkpoint has no embedded config"))?;
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(&ckpt.params));
        let state = TrainState {
            step: ckpt.step,
            adam,
            last_loss: None,
        };
        Self::assemble(corpus, cfg, ckpt.params, ckpt.classifier, state)
    }

    fn assemble(
        corpus: &'a Corpus,
        cfg: TrainConfig,
        params: VariationalParams<T>,
        classifier: SentimentClassifier<T>,
        state: TrainState<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let dims = params.dims();
        let expected = [
            ("document", dims.docs, corpus.num_docs()),
            ("term", dims.terms, corpus.num_terms()),
            ("brand", dims.brands, corpus.num_brands()),
            ("topic", dims.topics, cfg.topics),
            ("classifier term", dims.terms, classifier.num_terms()),
        ];
        for (axis, want, found) in expected {
            if want != found {
                return Err(Error::DimensionMismatch {
                    axis,
                    expected: want,
                    found,
                });
            }
        }
        let sampler = BalancedSampler::new(corpus)?;
        let settings = ObjectiveSettings {
            priors: priors_of(&cfg),
            tau: T::c(cfg.tau),
            truncation: cfg.truncation,
            normalize_soft_counts: cfg.normalize_soft_counts,
            freeze_polarity: cfg.freeze_polarity,
            num_train: num_train_docs(corpus),
        };
        let weights = LossWeights::from_lambda(T::c(cfg.lambda_weight));
        Ok(Self {
            corpus,
            cfg,
            sampler,
            settings,
            weights,
            params,
            classifier,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            step: self.state.step,
            config: Some(self.cfg.clone()),
            priors: self.settings.priors,
            params: self.params.clone(),
            classifier: self.classifier.clone(),
            adam: Some(self.state.adam.clone()),
        }
    }

    /// One optimizer step on a fresh balanced batch.
    pub fn step(&mut self) -> Result<StepReport<T>> {
        let step = self.state.step;
        let mut rng = step_rng(self.cfg.seed, step);
        let batch = self.sampler.sample(self.cfg.batch_size, &mut rng);
        let noise = StepNoise::draw(&self.params, batch.len(), &mut rng);
        let (loss, grads) = loss_and_gradients(
            &self.params,
            &self.classifier,
            self.corpus,
            &batch.docs,
            &noise,
            &self.settings,
            &self.weights,
        )
        .map_err(|e| match e {
            Error::NonFiniteLoss {
                elbo,
                supervised,
                adversarial,
                ..
            } => Error::NonFiniteLoss {
                step: step + 1,
                elbo,
                supervised,
                adversarial,
            },
            other => other,
        })?;
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                context: "gradient".into(),
                iteration: (step + 1) as usize,
            });
        }

        // Sum θ gradients of repeated documents.
        let k = self.params.dims().topics;
        let mut rows: Vec<(usize, Vec<T>, Vec<T>)> = Vec::new();
        let mut order: Vec<usize> = (0..batch.docs.len()).collect();
        order.sort_by_key(|&j| batch.docs[j]);
        for j in order {
            let d = batch.docs[j];
            if rows.last().map(|r| r.0) != Some(d) {
                rows.push((d, vec![T::zero(); k], vec![T::zero(); k]));
            }
            let r = rows.last_mut().unwrap();
            for t in 0..k {
                r.1[t] += grads.theta_loc[[j, t]];
                r.2[t] += grads.theta_scale_raw[[j, t]];
            }
        }
        let mut sq = T::zero();
        for (_, a, b) in &rows {
            sq += a.iter().chain(b).map(|&g| g * g).sum::<T>();
        }
        for s in &grads.slices()[2..] {
            sq += s.iter().map(|&g| g * g).sum::<T>();
        }
        let norm = sq.sqrt();
        let clip = T::c(self.cfg.grad_clip);
        let factor = if self.cfg.grad_clip > 0.0 && norm > clip {
            clip / norm
        } else {
            T::one()
        };

        let h = AdamHyper {
            learning_rate: self.cfg.learning_rate,
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            epsilon: self.cfg.adam_epsilon,
        };
        let t = step + 1;
        let adam = &mut self.state.adam;
        let mut scaled = vec![T::zero(); k];
        for (d, gl, gr) in &rows {
            adam.theta_steps[*d] += 1;
            let td = adam.theta_steps[*d];
            let off = d * k;
            for (ti, g) in [(0usize, gl), (1, gr)] {
                for (s, &v) in scaled.iter_mut().zip(g) {
                    *s = v * factor;
                }
                let tensor = if ti == 0 {
                    &mut self.params.theta_loc
                } else {
                    &mut self.params.theta_scale_raw
                };
                let row = &mut tensor.as_slice_mut().unwrap()[off..off + k];
                adam.moments[ti].update(off, row, &scaled, td, &h);
            }
        }
        let gslices = grads.slices();
        let frozen = self.settings.freeze_polarity;
        let mut targets: Vec<(usize, &mut [T])> = Vec::new();
        for (i, (_, p)) in self.params.tensors_mut().into_iter().enumerate().skip(2) {
            if frozen && i >= 4 {
                continue;
            }
            targets.push((i, p));
        }
        targets.push((8, self.classifier.weights.as_slice_mut().unwrap()));
        targets.push((9, self.classifier.bias.as_slice_mut().unwrap()));
        for (i, p) in targets {
            let g: Vec<T> = gslices[i].iter().map(|&v| v * factor).collect();
            adam.moments[i].update(0, p, &g, t, &h);
        }

        self.state.step = t;
        self.state.last_loss = Some(loss);
        Ok(StepReport {
            step: t,
            loss,
            grad_norm: norm,
            clipped: factor < T::one(),
        })
    }

    /// Steps until `max_steps` completed steps, logging and checkpointing
    /// into `out` when given.
    pub fn run(&mut self, max_steps: u64, out: Option<&RunDir>) -> Result<Vec<LogRow>> {
        let start = Instant::now();
        let mut rows = Vec::new();
        let mut log_file = match out {
            Some(dir) => Some(dir.open_log()?),
            None => None,
        };
        while self.state.step < max_steps {
            let report = self.step()?;
            let s = report.step;
            if s % self.cfg.log_every == 0 || s == max_steps {
                let row = LogRow::from_report(&report, start.elapsed().as_secs_f64());
                log::info!(
                    "step {s}: elbo {:.4e}  L_s {:.4}  L_a {:.4}  total {:.4e}",
                    row.elbo,
                    row.supervised,
                    row.adversarial,
                    row.total
                );
                if let (Some(f), Some(dir)) = (log_file.as_mut(), out) {
                    writeln!(f, "{}", row.to_tsv()).map_err(|e| Error::io(dir.log_path(), e))?;
                    f.flush().map_err(|e| Error::io(dir.log_path(), e))?;
                }
                rows.push(row);
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && s % self.cfg.checkpoint_every == 0 {
                    self.checkpoint().write(&dir.checkpoint_path(s))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().write(&dir.final_path())?;
        }
        Ok(rows)
    }
}

/// Paths inside a training output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn pretrain_path(&self) -> PathBuf {
        self.root.join(PRETRAIN_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn final_path(&self) -> PathBuf {
        self.root.join(FINAL_CHECKPOINT)
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(format!("step-{step:08}.btm"))
    }

    /// Opens the log for appending, writing the header into a new file.
    fn open_log(&self) -> Result<fs::File> {
        let path = self.log_path();
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(f)
    }
}

pub struct FitOutput<T> {
    pub params: VariationalParams<T>,
    pub classifier: SentimentClassifier<T>,
    pub state: TrainState<T>,
    pub log: Vec<LogRow>,
}

/// Pretrains, initializes and trains for `cfg.max_steps` steps.
pub fn fit<T: Scalar>(corpus: &Corpus, cfg: &TrainConfig, out: Option<&Path>) -> Result<FitOutput<T>> {
    cfg.validate()?;
    let dir = out.map(RunDir::create).transpose()?;
    if let Some(dir) = &dir {
        crate::io::write_atomic(&dir.config_path(), cfg.to_toml().as_bytes())?;
    }
    let pf = pretrain_for::<T>(corpus, cfg)?;
    if let Some(dir) = &dir {
        pf.write(&dir.pretrain_path(), &priors_of(cfg))?;
    }
    let params = initial_params(&pf, corpus.num_brands(), cfg)?;
    let mut trainer = Trainer::new(corpus, cfg.clone(), params)?;
    let log = trainer.run(cfg.max_steps, dir.as_ref())?;
    Ok(FitOutput {
        params: trainer.params,
        classifier: trainer.classifier,
        state: trainer.state,
        log,
    })
}

/// Continues a run from `checkpoint` up to `max_steps` (default: the config's).
pub fn resume<T: Scalar>(
    corpus: &Corpus,
    checkpoint: &Path,
    out: Option<&Path>,
    max_steps: Option<u64>,
) -> Result<FitOutput<T>> {
    let ckpt = Checkpoint::<T>::read(checkpoint)?;
    let mut trainer = Trainer::from_checkpoint(corpus, ckpt, None)?;
    let until = max_steps.unwrap_or(trainer.config().max_steps);
    let dir = out.map(RunDir::create).transpose()?;
    let log = trainer.run(until, dir.as_ref())?;
    Ok(FitOutput {
        params: trainer.params,
        classifier: trainer.classifier,
        state: trainer.state,
        log,
    })
}

#[cfg(test)]
mod tests;
