//! Brand ranking, polarity-swept topic reports, topic uniqueness and
//! coherence. Everything here works on variational locations (plug-in means),
//! so reports are deterministic functions of a checkpoint.

mod coherence;
mod stats;
mod uniqueness;

use std::fmt::Write as _;

pub use coherence::{topic_coherence, WindowCounts, DEFAULT_WINDOW};
pub use stats::{doubled_ranks, kendall_tau, pair_counts, spearman, tau_b, Correlation, PairCounts};
pub use uniqueness::{topic_uniqueness, UniquenessScore};

use crate::corpus::{Corpus, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::model::VariationalParams;
use crate::scalar::Scalar;

pub const DEFAULT_TOP_M: usize = 10;
pub const DEFAULT_SWEEP: [f64; 3] = [-1.0, 0.0, 1.0];

/// Top words of every topic at every sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicReport {
    pub sweep: Vec<f64>,
    pub top_m: usize,
    /// `lists[k][i]`: top words of topic `k` at `sweep[i]`, best first.
    pub lists: Vec<Vec<Vec<u32>>>,
}

impl TopicReport {
    pub fn num_topics(&self) -> usize {
        self.lists.len()
    }

    /// Every list, topic-major.
    pub fn all_lists(&self) -> Vec<Vec<u32>> {
        self.lists.iter().flatten().cloned().collect()
    }

    /// Plain-text rendering: one line per (topic, sweep value). The words of
    /// an n-gram are joined by `_` so every list entry is one field.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (k, topic) in self.lists.iter().enumerate() {
            for (s, list) in self.sweep.iter().zip(topic) {
                let words: Vec<String> = list.iter().map(|&v| vocab.token(v as usize).replace(' ', "_")).collect();
                writeln!(out, "topic {k:>3}  s={s:+.2}  {}", words.join(" ")).unwrap();
            }
        }
        out
    }
}

/// Ranks words of each topic by `β_loc + s·η_loc`, the log of the plug-in
/// intensity `exp(β_loc + s·η_loc)`. Equal scores fall back to the word string.
pub fn sweep_topics<T: Scalar>(
    params: &VariationalParams<T>,
    vocab: &Vocabulary,
    sweep: &[f64],
    top_m: usize,
) -> Result<TopicReport> {
    let dims = params.dims();
    if vocab.len() != dims.terms {
        return Err(Error::DimensionMismatch {
            axis: "term",
            expected: dims.terms,
            found: vocab.len(),
        });
    }
    if top_m == 0 || top_m > dims.terms {
        return Err(Error::validation(format!(
            "top-m must lie in 1..={}, got {top_m}",
            dims.terms
        )));
    }
    if sweep.is_empty() || sweep.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("sweep values must be finite and non-empty"));
    }
    let lists = (0..dims.topics)
        .map(|k| {
            sweep
                .iter()
                .map(|&s| {
                    let score: Vec<f64> = (0..dims.terms)
                        .map(|v| params.beta_loc[[k, v]].f64() + s * params.eta_loc[[k, v]].f64())
                        .collect();
                    top_words(&score, vocab, top_m)
                })
                .collect()
        })
        .collect();
    Ok(TopicReport {
        sweep: sweep.to_vec(),
        top_m,
        lists,
    })
}

fn top_words(score: &[f64], vocab: &Vocabulary, m: usize) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| {
        score[b]
            .total_cmp(&score[a])
            .then_with(|| vocab.token(a).cmp(vocab.token(b)))
    });
    idx.truncate(m);
    idx.into_iter().map(|v| v as u32).collect()
}

/// One row of the brand ranking table.
#[derive(Debug, Clone, PartialEq)]
pub struct BrandScore {
    pub brand: usize,
    pub name: String,
    /// Sign-aligned `x_loc`.
    pub score: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrandRanking {
    /// Brands with a reference score, best inferred score first.
    pub rows: Vec<BrandScore>,
    /// Whether `x_loc` was negated to agree with the training labels.
    pub flipped: bool,
    pub spearman: Correlation,
    pub kendall: Correlation,
}

impl BrandRanking {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("rank\tbrand\tscore\treference\n");
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(s, "{}\t{}\t{:.6}\t{:.6}", i + 1, r.name, r.score, r.reference).unwrap();
        }
        s
    }
}

/// Mean training label (NEG = -1, NEU = 0, POS = 1) of every brand; `None`
/// for brands without training documents.
pub fn mean_training_labels(corpus: &Corpus) -> Vec<Option<f64>> {
    let mut sum = vec![0i64; corpus.num_brands()];
    let mut n = vec![0u64; corpus.num_brands()];
    for d in corpus.docs_in(Split::Train) {
        let b = corpus.brand_of(d);
        sum[b] += corpus.label(d).signed() as i64;
        n[b] += 1;
    }
    sum.iter()
        .zip(&n)
        .map(|(&s, &c)| (c > 0).then(|| s as f64 / c as f64))
        .collect()
}

/// Whether `x_loc` must be negated so that it correlates non-negatively with
/// the mean training labels. Stays unflipped when that correlation is undefined.
pub fn needs_flip(x: &[f64], corpus: &Corpus) -> bool {
    let (xs, ys): (Vec<f64>, Vec<f64>) = mean_training_labels(corpus)
        .into_iter()
        .zip(x)
        .filter_map(|(m, &xv)| m.map(|m| (xv, m)))
        .unzip();
    match spearman(&xs, &ys) {
        Ok(r) => r.corr < 0.0,
        Err(e) => {
            log::warn!("sign alignment skipped: {e}");
            false
        }
    }
}

/// Sign-aligned brand scores correlated with each brand's reference score.
/// Brands without a reference score are left out.
pub fn rank_brands<T: Scalar>(params: &VariationalParams<T>, corpus: &Corpus) -> Result<BrandRanking> {
    let dims = params.dims();
    if dims.brands != corpus.num_brands() {
        return Err(Error::DimensionMismatch {
            axis: "brand",
            expected: dims.brands,
            found: corpus.num_brands(),
        });
    }
    let x: Vec<f64> = params.x_loc.iter().map(|v| v.f64()).collect();
    let flipped = needs_flip(&x, corpus);
    let sign = if flipped { -1.0 } else { 1.0 };
    let mut rows = Vec::new();
    for (b, info) in corpus.brands().iter().enumerate() {
        match info.reference_score {
            Some(r) => rows.push(BrandScore {
                brand: b,
                name: info.name.clone(),
                score: sign * x[b],
                reference: r,
            }),
            None => log::warn!("brand {} has no reference score and is not ranked", info.name),
        }
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let refs: Vec<f64> = rows.iter().map(|r| r.reference).collect();
    let spearman = spearman(&scores, &refs)?;
    let kendall = kendall_tau(&scores, &refs)?;
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.brand.cmp(&b.brand)));
    Ok(BrandRanking {
        rows,
        flipped,
        spearman,
        kendall,
    })
}

/// Permutation `p` maximizing `Σ_i sim[i][p[i]]`, by exhaustive search.
pub fn match_topics(sim: &[Vec<f64>]) -> Result<Vec<usize>> {
    let k = sim.len();
    if k > 9 {
        return Err(Error::validation("exhaustive topic matching supports at most 9 topics"));
    }
    if sim.iter().any(|r| r.len() != k) {
        return Err(Error::validation("topic similarity matrix must be square"));
    }
    let mut best = (f64::NEG_INFINITY, (0..k).collect::<Vec<_>>());
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = p.iter().enumerate().map(|(i, &j)| sim[i][j]).sum();
        if s > best.0 {
            best = (s, p.to_vec());
        }
    });
    Ok(best.1)
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

/// Headline numbers of an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub coherence: f64,
    pub uniqueness: f64,
    pub ranking: Option<BrandRanking>,
}

impl EvalSummary {
    pub fn line(&self) -> String {
        let mut s = format!("coherence={:.4} tu={:.4}", self.coherence, self.uniqueness);
        match &self.ranking {
            Some(r) => write!(
                s,
                " spearman={:.4} spearman_p={:.4e} kendall={:.4} kendall_p={:.4e}",
                r.spearman.corr, r.spearman.p, r.kendall.corr, r.kendall.p
            )
            .unwrap(),
            None => s.push_str(" spearman=NA kendall=NA"),
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub topics: TopicReport,
    pub summary: EvalSummary,
}

/// Topic report, uniqueness, coherence against `corpus`, and the brand
/// ranking when it is defined.
pub fn evaluate<T: Scalar>(
    params: &VariationalParams<T>,
    corpus: &Corpus,
    vocab: &Vocabulary,
    sweep: &[f64],
    top_m: usize,
    window: usize,
) -> Result<Evaluation> {
    let topics = sweep_topics(params, vocab, sweep, top_m)?;
    let uniqueness = topic_uniqueness(&topics.lists)?.tu;
    let coherence = topic_coherence(&corpus.token_sequences(), &topics.all_lists(), window)?;
    let ranking = match rank_brands(params, corpus) {
        Ok(r) => Some(r),
        Err(e @ Error::Undefined(_)) => {
            log::warn!("brand ranking unavailable: {e}");
            None
        }
        Err(Error::Validation(m)) if m.contains("at least 3") => {
            log::warn!("brand ranking unavailable: {m}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        topics,
        summary: EvalSummary {
            coherence,
            uniqueness,
            ranking,
        },
    })
}
