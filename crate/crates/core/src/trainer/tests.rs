use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::Polarity;
use crate::objective::StepNoise;
use crate::test_support::dense_corpus;

fn small_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, v) = (12, 8);
    let counts = Array2::from_shape_fn((d, v), |_| if rng.random_bool(0.6) { rng.random_range(1..5) } else { 0 });
    let brands: Vec<u32> = (0..d).map(|i| (i % 3) as u32).collect();
    let labels: Vec<Polarity> = (0..d).map(|i| Polarity::from_index(i % 3).unwrap()).collect();
    dense_corpus(&counts, &brands, &labels, &[10])
}

fn small_config() -> TrainConfig {
    TrainConfig {
        topics: 2,
        batch_size: 6,
        max_steps: 12,
        log_every: 3,
        checkpoint_every: 5,
        pretrain_iters: 20,
        ..TrainConfig::default()
    }
}

fn random_params(corpus: &Corpus, k: usize, seed: u64) -> VariationalParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, v, b) = (corpus.num_docs(), corpus.num_terms(), corpus.num_brands());
    let mut u = |r: (usize, usize), lo: f64, hi: f64| Array2::from_shape_fn(r, |_| rng.random_range(lo..hi));
    VariationalParams {
        theta_loc: u((d, k), -0.5, 0.5),
        theta_scale_raw: u((d, k), -3.0, -1.0),
        beta_loc: u((k, v), -1.0, 0.0),
        beta_scale_raw: u((k, v), -3.0, -1.0),
        eta_loc: Array2::zeros((k, v)),
        eta_scale_raw: u((k, v), -3.0, -1.0),
        x_loc: Array1::zeros(b),
        x_scale_raw: Array1::from_elem(b, -2.0),
    }
}

#[test]
fn zero_steps_returns_the_pretrained_init() {
    let corpus = small_corpus(1);
    let cfg = TrainConfig {
        max_steps: 0,
        ..small_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = fit::<f64>(&corpus, &cfg, Some(dir.path())).unwrap();
    let pf = pretrain_for::<f64>(&corpus, &cfg).unwrap();
    assert_eq!(out.params, initial_params(&pf, corpus.num_brands(), &cfg).unwrap());
    assert!(out.log.is_empty());
    let run = RunDir { root: dir.path().into() };
    let ckpt = Checkpoint::<f64>::read(&run.final_path()).unwrap();
    assert_eq!(ckpt.step, 0);
    assert_eq!(ckpt.params, out.params);
    let (read_pf, _) = PFParams::<f64>::read(&run.pretrain_path()).unwrap();
    assert_eq!(read_pf, pf);
    assert_eq!(TrainConfig::load(&run.config_path()).unwrap(), cfg);
}

#[test]
fn same_seed_same_trace() {
    let corpus = small_corpus(2);
    let a = fit::<f64>(&corpus, &small_config(), None).unwrap();
    let b = fit::<f64>(&corpus, &small_config(), None).unwrap();
    assert_eq!(a.params, b.params);
    let strip = |rows: &[LogRow]| rows.iter().map(|r| (r.step, r.elbo, r.supervised, r.adversarial, r.total)).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
    let c = fit::<f64>(
        &corpus,
        &TrainConfig {
            seed: 9,
            ..small_config()
        },
        None,
    )
    .unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn training_is_thread_count_independent() {
    let corpus = small_corpus(3);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit::<f64>(&corpus, &small_config(), None).unwrap().params)
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn resume_continues_bitwise() {
    let corpus = small_corpus(4);
    let cfg = small_config();
    let straight = fit::<f64>(&corpus, &cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let half = fit::<f64>(
        &corpus,
        &TrainConfig {
            max_steps: 5,
            ..cfg.clone()
        },
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(half.state.step, 5);
    let run = RunDir { root: dir.path().into() };
    let ckpt_path = run.checkpoint_path(5);
    assert!(ckpt_path.exists());
    // the stored config says 5 steps; continue to the full length
    let resumed = resume::<f64>(&corpus, &ckpt_path, Some(dir.path()), Some(cfg.max_steps)).unwrap();
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.classifier, straight.classifier);
    assert_eq!(resumed.state.adam, straight.state.adam);

    // the appended log matches the uninterrupted one
    let logged = read_log(&run.log_path()).unwrap();
    let tail: Vec<_> = logged.iter().filter(|r| r.step > 5).map(|r| (r.step, r.total)).collect();
    let want: Vec<_> = straight.log.iter().filter(|r| r.step > 5).map(|r| (r.step, r.total)).collect();
    assert_eq!(tail, want);
}

#[test]
fn logged_breakdown_identity_holds() {
    let corpus = small_corpus(5);
    let cfg = TrainConfig {
        log_every: 1,
        ..small_config()
    };
    let out = fit::<f64>(&corpus, &cfg, None).unwrap();
    assert_eq!(out.log.len(), cfg.max_steps as usize);
    for r in &out.log {
        let want = -r.elbo + cfg.lambda_weight * (r.supervised + r.adversarial);
        assert!((r.total - want).abs() <= 1e-9 * want.abs().max(1.0), "{r:?}");
    }
}

#[test]
fn log_rows_roundtrip_through_tsv() {
    let row = LogRow {
        step: 7,
        elbo: -1234.5678901234,
        supervised: 0.25,
        adversarial: 1.0 / 3.0,
        total: 1292.9,
        wall_seconds: 0.5,
    };
    assert_eq!(LogRow::parse(&row.to_tsv()).unwrap(), row);
    assert!(LogRow::parse("1\t2").is_err());
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let corpus = small_corpus(6);
    let mut t = Trainer::new(&corpus, small_config(), random_params(&corpus, 2, 0)).unwrap();
    t.step().unwrap();
    let ckpt = t.checkpoint();
    let bytes = ckpt.to_bytes();
    assert_eq!(Checkpoint::<f64>::from_bytes(&bytes).unwrap(), ckpt);
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().is_validation());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::<f64>::from_bytes(&bad).unwrap_err().is_validation());
    let mut extra = bytes;
    extra.push(0);
    assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
}

#[test]
fn f32_checkpoint_loads_as_f64() {
    let corpus = small_corpus(6);
    let cfg = small_config();
    let p32: VariationalParams<f32> = {
        let p = random_params(&corpus, 2, 1);
        VariationalParams {
            theta_loc: p.theta_loc.mapv(|v| v as f32),
            theta_scale_raw: p.theta_scale_raw.mapv(|v| v as f32),
            beta_loc: p.beta_loc.mapv(|v| v as f32),
            beta_scale_raw: p.beta_scale_raw.mapv(|v| v as f32),
            eta_loc: p.eta_loc.mapv(|v| v as f32),
            eta_scale_raw: p.eta_scale_raw.mapv(|v| v as f32),
            x_loc: p.x_loc.mapv(|v| v as f32),
            x_scale_raw: p.x_scale_raw.mapv(|v| v as f32),
        }
    };
    let mut t = Trainer::new(&corpus, cfg, p32).unwrap();
    let r = t.step().unwrap();
    assert!(r.loss.total.is_finite());
    let loaded = Checkpoint::<f64>::from_bytes(&t.checkpoint().to_bytes()).unwrap();
    assert_eq!(loaded.params.beta_loc[[1, 3]], t.params.beta_loc[[1, 3]] as f64);
}

#[test]
fn dimension_mismatch_names_axis() {
    let corpus = small_corpus(7);
    let cfg = TrainConfig {
        topics: 3,
        ..small_config()
    };
    match Trainer::new(&corpus, cfg, random_params(&corpus, 2, 0)) {
        Err(Error::DimensionMismatch { axis, .. }) => assert_eq!(axis, "topic"),
        other => panic!("unexpected {:?}", other.err()),
    }
}

#[test]
fn frozen_polarity_stays_fixed() {
    let corpus = small_corpus(8);
    let cfg = TrainConfig {
        freeze_polarity: true,
        ..small_config()
    };
    let mut p = random_params(&corpus, 2, 3);
    p.eta_loc.fill(0.3);
    p.x_loc.fill(-0.2);
    let mut t = Trainer::new(&corpus, cfg, p.clone()).unwrap();
    t.run(6, None).unwrap();
    assert_eq!(t.params.eta_loc, p.eta_loc);
    assert_eq!(t.params.eta_scale_raw, p.eta_scale_raw);
    assert_eq!(t.params.x_loc, p.x_loc);
    assert_eq!(t.params.x_scale_raw, p.x_scale_raw);
    assert_ne!(t.params.beta_loc, p.beta_loc);
}

/// Stochastic VI for plain Poisson factorization with lognormal factors,
/// written directly from the model: rates `θ_d·β_v`, Gamma priors, one
/// reparameterized sample, Adam with per-document step counts for θ.
struct PfSvi {
    counts: Array2<f64>,
    num_train: f64,
    m: f64,
    n: f64,
    h: AdamHyper,
    clip: f64,
    params: [Array2<f64>; 4],
    moments: [(Array2<f64>, Array2<f64>); 4],
    theta_steps: Vec<u64>,
    step: u64,
}

impl PfSvi {
    fn adam(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, t: u64, h: &AdamHyper) {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let mh = *m / (1.0 - h.beta1.powi(t as i32));
        let vh = *v / (1.0 - h.beta2.powi(t as i32));
        *p -= h.learning_rate * mh / (vh.sqrt() + h.epsilon);
    }

    fn step(&mut self, docs: &[usize], eps_theta: &Array2<f64>, eps_beta: &Array2<f64>) {
        let sp = |r: f64| (1.0 + r.exp()).ln();
        let sig = |r: f64| 1.0 / (1.0 + (-r).exp());
        let [tl, tr, bl, br] = &self.params;
        let (k, v) = bl.dim();
        let s = self.num_train / docs.len() as f64;
        let beta = Array2::from_shape_fn((k, v), |(a, w)| (bl[[a, w]] + sp(br[[a, w]]) * eps_beta[[a, w]]).exp());
        let mut g_bl = Array2::<f64>::zeros((k, v));
        let d_all = tl.nrows();
        let mut g_tl = Array2::<f64>::zeros((d_all, k));
        let mut g_tr = Array2::<f64>::zeros((d_all, k));
        let mut touched = vec![false; d_all];
        for (j, &d) in docs.iter().enumerate() {
            touched[d] = true;
            let th: Vec<f64> = (0..k).map(|a| (tl[[d, a]] + sp(tr[[d, a]]) * eps_theta[[j, a]]).exp()).collect();
            let lam: Vec<f64> = (0..v).map(|w| (0..k).map(|a| th[a] * beta[[a, w]]).sum()).collect();
            for a in 0..k {
                let mut dl = 0.0;
                for w in 0..v {
                    let r = self.counts[[d, w]] / lam[w] - 1.0;
                    dl += beta[[a, w]] * r;
                    g_bl[[a, w]] += s * th[a] * beta[[a, w]] * r;
                }
                let du = s * (th[a] * dl + self.m - self.n * th[a]);
                let sigma = sp(tr[[d, a]]);
                // gradients of the loss -ELBO
                g_tl[[d, a]] -= du;
                g_tr[[d, a]] -= (eps_theta[[j, a]] * du + s / sigma) * sig(tr[[d, a]]);
            }
        }
        let mut g_br = Array2::<f64>::zeros((k, v));
        for a in 0..k {
            for w in 0..v {
                let du = g_bl[[a, w]] + self.m - self.n * beta[[a, w]];
                let sigma = sp(br[[a, w]]);
                g_bl[[a, w]] = -du;
                g_br[[a, w]] = -(eps_beta[[a, w]] * du + 1.0 / sigma) * sig(br[[a, w]]);
            }
        }
        let sq: f64 = [&g_tl, &g_tr, &g_bl, &g_br].iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
        let f = if sq.sqrt() > self.clip { self.clip / sq.sqrt() } else { 1.0 };
        self.step += 1;
        let grads = [g_tl, g_tr, g_bl, g_br];
        for d in 0..d_all {
            if touched[d] {
                self.theta_steps[d] += 1;
            }
        }
        for (i, g) in grads.iter().enumerate() {
            let (m, vv) = &mut self.moments[i];
            for (idx, p) in self.params[i].indexed_iter_mut() {
                let t = if i < 2 {
                    if !touched[idx.0] {
                        continue;
                    }
                    self.theta_steps[idx.0]
                } else {
                    self.step
                };
                Self::adam(p, &mut m[idx], &mut vv[idx], g[idx] * f, t, &self.h);
            }
        }
    }
}

#[test]
fn zero_lambda_with_frozen_polarity_is_pf_svi() {
    let corpus = small_corpus(10);
    let cfg = TrainConfig {
        lambda_weight: 0.0,
        freeze_polarity: true,
        ..small_config()
    };
    let init = random_params(&corpus, 2, 11);
    let mut trainer = Trainer::new(&corpus, cfg.clone(), init.clone()).unwrap();

    let (d, v) = (corpus.num_docs(), corpus.num_terms());
    let mut counts = Array2::zeros((d, v));
    for doc in 0..d {
        let (terms, cs) = corpus.doc(doc);
        for (&t, &c) in terms.iter().zip(cs) {
            counts[[doc, t as usize]] = c as f64;
        }
    }
    let zeros = |a: &Array2<f64>| (Array2::zeros(a.dim()), Array2::zeros(a.dim()));
    let mut reference = PfSvi {
        counts,
        num_train: corpus.docs_in(crate::corpus::Split::Train).count() as f64,
        m: cfg.prior_shape,
        n: cfg.prior_rate,
        h: AdamHyper {
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        },
        clip: cfg.grad_clip,
        moments: [
            zeros(&init.theta_loc),
            zeros(&init.theta_scale_raw),
            zeros(&init.beta_loc),
            zeros(&init.beta_scale_raw),
        ],
        params: [init.theta_loc.clone(), init.theta_scale_raw.clone(), init.beta_loc.clone(), init.beta_scale_raw.clone()],
        theta_steps: vec![0; d],
        step: 0,
    };
    let sampler = BalancedSampler::new(&corpus).unwrap();
    for step in 0..8 {
        let mut rng = step_rng(cfg.seed, step);
        let batch = sampler.sample(cfg.batch_size, &mut rng);
        let noise = StepNoise::<f64>::draw(&init, batch.len(), &mut rng);
        reference.step(&batch.docs, &noise.reparam.theta, &noise.reparam.beta);
        trainer.step().unwrap();
    }
    let got = [
        &trainer.params.theta_loc,
        &trainer.params.theta_scale_raw,
        &trainer.params.beta_loc,
        &trainer.params.beta_scale_raw,
    ];
    for (name, (a, b)) in ["theta_loc", "theta_scale_raw", "beta_loc", "beta_scale_raw"]
        .iter()
        .zip(got.into_iter().zip(&reference.params))
    {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{name}: {x} vs {y}");
        }
    }
    assert_eq!(trainer.params.eta_loc, init.eta_loc);
    assert_eq!(trainer.params.x_loc, init.x_loc);
    assert!(trainer.classifier.weights.iter().all(|&w| w == 0.0));
}
