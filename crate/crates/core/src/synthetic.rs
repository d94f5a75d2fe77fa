//! Corpora generated from the brand-topic generative story with planted
//! parameters, used as a recovery oracle.
//!
//! Counts are exact (untruncated) Poisson draws at
//! `λ_dv = Σ_k θ_dk β_kv exp(x_b η_kv)`. Labels come from the planted brand
//! score: POS above [`LABEL_THRESHOLD`], NEG below its negation, NEU otherwise.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{assign_split, BrandInfo, Bundle, Corpus, DocMeta, Polarity, SparseRow, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const LABEL_THRESHOLD: f64 = 0.3;
pub const PLANTED_FILE: &str = "planted.json";

/// Label of a document whose brand has planted score `x`.
pub fn planted_label(x: f64) -> Polarity {
    if x > LABEL_THRESHOLD {
        Polarity::Pos
    } else if x < -LABEL_THRESHOLD {
        Polarity::Neg
    } else {
        Polarity::Neu
    }
}

/// Ground truth of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// D×K.
    pub theta: Array2<f64>,
    /// K×V.
    pub beta: Array2<f64>,
    /// K×V.
    pub eta: Array2<f64>,
    pub x: Array1<f64>,
    pub brand_of: Vec<u32>,
    /// Per topic, the words planted with positive η.
    pub positive_words: Vec<Vec<usize>>,
    /// Per topic, the words planted with negative η.
    pub negative_words: Vec<Vec<usize>>,
}

impl PlantedModel {
    pub fn num_docs(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_topics(&self) -> usize {
        self.theta.ncols()
    }

    pub fn num_terms(&self) -> usize {
        self.beta.ncols()
    }

    pub fn num_brands(&self) -> usize {
        self.x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = self.theta.dim();
        let v = self.num_terms();
        if self.beta.dim() != (k, v) || self.eta.dim() != (k, v) {
            return Err(Error::validation("planted β and η must both be K×V"));
        }
        if self.brand_of.len() != d {
            return Err(Error::validation("planted brand assignment must cover every document"));
        }
        if self.brand_of.iter().any(|&b| b as usize >= self.x.len()) {
            return Err(Error::validation("planted brand id out of range"));
        }
        if self.theta.iter().chain(&self.beta).any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::validation("planted θ and β must be non-negative"));
        }
        if self.eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("planted η must be finite"));
        }
        if self.x.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::validation("planted brand scores must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// Dense rate vector of planted document `d`.
    pub fn rates(&self, d: usize) -> Vec<f64> {
        let x = self.x[self.brand_of[d] as usize];
        let mut out = vec![0.0; self.num_terms()];
        for k in 0..self.num_topics() {
            let th = self.theta[[d, k]];
            for (v, o) in out.iter_mut().enumerate() {
                *o += th * self.beta[[k, v]] * (x * self.eta[[k, v]]).exp();
            }
        }
        out
    }

    pub fn label(&self, d: usize) -> Polarity {
        planted_label(self.x[self.brand_of[d] as usize])
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("planted model serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        p.validate()?;
        Ok(p)
    }
}

/// Count rows of every planted document, in document order. Document `d`
/// draws from its own ChaCha8 stream.
pub fn generate_rows(planted: &PlantedModel, seed: u64) -> Vec<SparseRow> {
    (0..planted.num_docs())
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            planted
                .rates(d)
                .into_iter()
                .enumerate()
                .filter_map(|(v, lam)| {
                    if lam <= 0.0 {
                        return None;
                    }
                    let c = Poisson::new(lam).expect("positive finite rate").sample(&mut rng) as u32;
                    (c > 0).then_some((v as u32, c))
                })
                .collect()
        })
        .collect()
}

/// Corpus of Poisson draws; documents without counts are dropped. Every
/// document is TRAIN unless `test_fraction > 0`.
pub fn generate(planted: &PlantedModel, seed: u64, test_fraction: f64) -> Result<Corpus> {
    planted.validate()?;
    let rows = generate_rows(planted, seed);
    let split = assign_split(rows.len(), test_fraction, seed)?;
    let metas = (0..rows.len()).map(|d| DocMeta {
        brand: planted.brand_of[d],
        label: planted.label(d),
        split: split[d],
    });
    let brands = (0..planted.num_brands())
        .map(|b| BrandInfo {
            name: format!("brand{b:02}"),
            reference_score: Some(planted.x[b]),
        })
        .collect();
    Corpus::from_rows(rows.into_iter().zip(metas).collect(), planted.num_terms(), brands)
}

/// Shape of a planted testbed. Topic `k` owns the word block
/// `[k·block, (k+1)·block)`; its first `polar_words` words get `η = +eta`, the
/// next `polar_words` get `η = -eta`, everything else `η = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestbedSpec {
    pub docs: usize,
    pub terms: usize,
    pub topics: usize,
    pub brands: usize,
    pub block: usize,
    pub polar_words: usize,
    pub eta: f64,
    pub beta_in_block: f64,
    pub beta_off_block: f64,
    /// θ ~ Gamma(shape, rate).
    pub theta_shape: f64,
    pub theta_rate: f64,
    pub test_fraction: f64,
}

impl Default for TestbedSpec {
    fn default() -> Self {
        Self {
            docs: 5000,
            terms: 200,
            topics: 5,
            brands: 10,
            block: 40,
            polar_words: 10,
            eta: 1.0,
            beta_in_block: 0.2,
            beta_off_block: 0.002,
            theta_shape: 0.5,
            theta_rate: 0.5,
            test_fraction: 0.1,
        }
    }
}

/// `n` evenly spaced points from -1 to 1.
pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn word_name(v: usize) -> String {
    format!("w{v:03}")
}

pub fn planted_model(spec: &TestbedSpec, seed: u64) -> Result<PlantedModel> {
    if spec.topics == 0 || spec.brands == 0 || spec.docs == 0 {
        return Err(Error::validation("testbed needs at least one topic, brand and document"));
    }
    if spec.block * spec.topics > spec.terms || 2 * spec.polar_words > spec.block {
        return Err(Error::validation("testbed word blocks do not fit the vocabulary"));
    }
    let (d, k, v) = (spec.docs, spec.topics, spec.terms);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e57);
    let gamma = Gamma::new(spec.theta_shape, 1.0 / spec.theta_rate)
        .map_err(|e| Error::validation(format!("bad θ prior: {e}")))?;
    let theta = Array2::from_shape_fn((d, k), |_| gamma.sample(&mut rng));
    let brand_of: Vec<u32> = (0..d).map(|_| rng.random_range(0..spec.brands) as u32).collect();
    let mut beta = Array2::from_elem((k, v), spec.beta_off_block);
    let mut eta = Array2::zeros((k, v));
    let mut positive_words = Vec::new();
    let mut negative_words = Vec::new();
    for t in 0..k {
        let start = t * spec.block;
        for w in start..start + spec.block {
            beta[[t, w]] = spec.beta_in_block;
        }
        let pos: Vec<usize> = (start..start + spec.polar_words).collect();
        let neg: Vec<usize> = (start + spec.polar_words..start + 2 * spec.polar_words).collect();
        for &w in &pos {
            eta[[t, w]] = spec.eta;
        }
        for &w in &neg {
            eta[[t, w]] = -spec.eta;
        }
        positive_words.push(pos);
        negative_words.push(neg);
    }
    let p = PlantedModel {
        theta,
        beta,
        eta,
        x: Array1::from(linspace(spec.brands)),
        brand_of,
        positive_words,
        negative_words,
    };
    p.validate()?;
    Ok(p)
}

/// Planted model plus a bundle with words `w000…` and brands `brand00…`
/// whose reference scores are the planted `x`.
pub fn testbed(spec: &TestbedSpec, seed: u64) -> Result<(PlantedModel, Bundle)> {
    let planted = planted_model(spec, seed)?;
    let corpus = generate(&planted, seed, spec.test_fraction)?;
    let vocab = Vocabulary::from_tokens((0..spec.terms).map(word_name).collect())?;
    Ok((planted, Bundle { vocab, corpus }))
}

/// D=5000, V=200, K=5, B=10 testbed.
pub fn default_testbed(seed: u64) -> Result<(PlantedModel, Bundle)> {
    testbed(&TestbedSpec::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TestbedSpec {
        TestbedSpec {
            docs: 300,
            ..TestbedSpec::default()
        }
    }

    #[test]
    fn linspace_endpoints() {
        let x = linspace(10);
        assert_eq!(x[0], -1.0);
        assert_eq!(x[9], 1.0);
        assert!((x[1] + 7.0 / 9.0).abs() < 1e-15);
        assert!((x[8] - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(linspace(1), vec![0.0]);
    }

    #[test]
    fn labels_follow_thresholds() {
        assert_eq!(planted_label(0.31), Polarity::Pos);
        assert_eq!(planted_label(0.3), Polarity::Neu);
        assert_eq!(planted_label(-0.3), Polarity::Neu);
        assert_eq!(planted_label(-0.31), Polarity::Neg);
    }

    #[test]
    fn same_seed_same_corpus() {
        let (p1, b1) = testbed(&small_spec(), 4).unwrap();
        let (p2, b2) = testbed(&small_spec(), 4).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(b1, b2);
        let (_, b3) = testbed(&small_spec(), 5).unwrap();
        assert_ne!(b1.corpus, b3.corpus);
    }

    #[test]
    fn poisson_mean_matches_rate() {
        // one planted document replicated many times
        let reps = 100_000;
        let mut p = planted_model(
            &TestbedSpec {
                docs: 1,
                terms: 4,
                topics: 1,
                brands: 2,
                block: 4,
                polar_words: 1,
                eta: 0.7,
                beta_in_block: 0.5,
                ..TestbedSpec::default()
            },
            0,
        )
        .unwrap();
        p.theta[[0, 0]] = 3.0;
        p.brand_of[0] = 1;
        let rates = p.rates(0);
        p.theta = Array2::from_elem((reps, 1), 3.0);
        p.brand_of = vec![1; reps];
        let rows = generate_rows(&p, 1);
        let mut sums = [0.0f64; 4];
        for r in &rows {
            for &(t, c) in r {
                sums[t as usize] += c as f64;
            }
        }
        for v in 0..4 {
            let mean = sums[v] / reps as f64;
            assert!((mean - rates[v]).abs() / rates[v] < 0.01, "term {v}: {mean} vs {}", rates[v]);
        }
    }

    #[test]
    fn zero_brand_scores_give_pf_rates() {
        let mut p = planted_model(&small_spec(), 2).unwrap();
        p.x.fill(0.0);
        let pf = p.theta.dot(&p.beta);
        for d in [0, 10, 299] {
            let r = p.rates(d);
            for v in 0..p.num_terms() {
                assert!((r[v] - pf[[d, v]]).abs() <= 1e-12 * pf[[d, v]]);
            }
        }
    }

    #[test]
    fn zero_rates_give_no_corpus() {
        let mut p = planted_model(&small_spec(), 0).unwrap();
        p.theta.fill(0.0);
        assert!(generate(&p, 0, 0.0).unwrap_err().is_validation());
    }

    #[test]
    fn default_testbed_shape_and_classes() {
        let (p, b) = default_testbed(0).unwrap();
        assert_eq!((p.num_docs(), p.num_terms(), p.num_topics(), p.num_brands()), (5000, 200, 5, 10));
        assert_eq!(b.vocab.token(0), "w000");
        assert_eq!(b.corpus.brands()[3].name, "brand03");
        assert_eq!(b.corpus.brands()[0].reference_score, Some(-1.0));
        // brands are uniform, so 4/10 NEG, 2/10 NEU, 4/10 POS
        let counts = b.corpus.class_counts();
        let n = b.corpus.num_docs() as f64;
        let want = [0.4, 0.2, 0.4];
        for c in 0..3 {
            assert!((counts[c] as f64 / n - want[c]).abs() < 0.03, "{counts:?}");
        }
        assert!(b.corpus.num_docs() > 4950);
    }

    #[test]
    fn bundle_and_planted_file_roundtrip() {
        let (p, b) = testbed(&small_spec(), 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::corpus::write_bundle(dir.path(), &b).unwrap();
        assert_eq!(crate::corpus::read_bundle(dir.path()).unwrap(), b);
        let path = dir.path().join(PLANTED_FILE);
        p.write(&path).unwrap();
        assert_eq!(PlantedModel::read(&path).unwrap(), p);
    }
}
