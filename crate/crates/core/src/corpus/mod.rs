//! Review ingestion: polarity labels, n-gram vocabulary, sparse counts,
//! train/test split and class-balanced mini-batches.

mod bundle;
mod reviews;
pub mod tokenize;
mod vocab;

use std::collections::{BTreeSet, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bundle::{read_bundle, write_bundle, Bundle};
pub use reviews::{parse_reviews, read_reviews, ParsedReviews, RecordError};
pub use vocab::{build_vocabulary, Vocabulary};

use crate::error::{Error, Result};

/// Three-way review polarity derived from the star rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Neg,
    Neu,
    Pos,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Neg, Polarity::Neu, Polarity::Pos];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Reversed polarity: NEG and POS swap, NEU is fixed.
    pub fn flip(self) -> Self {
        match self {
            Polarity::Neg => Polarity::Pos,
            Polarity::Neu => Polarity::Neu,
            Polarity::Pos => Polarity::Neg,
        }
    }

    /// -1, 0, +1.
    pub fn signed(self) -> i32 {
        self as i32 - 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Neg => "NEG",
            Polarity::Neu => "NEU",
            Polarity::Pos => "POS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NEG" => Some(Polarity::Neg),
            "NEU" => Some(Polarity::Neu),
            "POS" => Some(Polarity::Pos),
            _ => None,
        }
    }
}

/// Ratings 1-2 are negative, 3 neutral, 4-5 positive.
pub fn label_from_rating(rating: i64) -> Result<Polarity> {
    match rating {
        1 | 2 => Ok(Polarity::Neg),
        3 => Ok(Polarity::Neu),
        4 | 5 => Ok(Polarity::Pos),
        r => Err(Error::validation(format!("rating {r} outside 1..=5"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Test => "TEST",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TRAIN" => Some(Split::Train),
            "TEST" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReview {
    pub text: String,
    pub rating: i64,
    pub brand: String,
}

impl RawReview {
    pub fn validate(&self) -> Result<()> {
        label_from_rating(self.rating)?;
        if self.brand.trim().is_empty() {
            return Err(Error::validation("brand is empty"));
        }
        Ok(())
    }
}

/// Per-brand metadata carried with a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BrandInfo {
    pub name: String,
    /// Ground truth the inferred brand scores are ranked against: the mean
    /// star rating over held-out reviews for ingested data, the planted score
    /// for synthetic data. `None` when no held-out review exists.
    pub reference_score: Option<f64>,
}

/// Dense ids for the distinct brand strings, in sorted order.
#[derive(Debug, Clone)]
pub struct BrandIndex {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl BrandIndex {
    pub fn from_reviews<'a>(reviews: impl IntoIterator<Item = &'a RawReview>) -> Self {
        let names: BTreeSet<&str> = reviews.into_iter().map(|r| r.brand.as_str()).collect();
        Self::from_names(names.into_iter().map(String::from).collect())
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, ids }
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One document row before assembly: sorted `(term, count)` pairs.
pub type SparseRow = Vec<(u32, u32)>;

/// Immutable bag-of-words corpus in CSR layout plus per-document metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    indptr: Vec<usize>,
    terms: Vec<u32>,
    counts: Vec<u32>,
    num_terms: usize,
    brand_of: Vec<u32>,
    labels: Vec<Polarity>,
    split: Vec<Split>,
    brands: Vec<BrandInfo>,
}

/// Per-document metadata accompanying a [`SparseRow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocMeta {
    pub brand: u32,
    pub label: Polarity,
    pub split: Split,
}

impl Corpus {
    /// Assemble a corpus, dropping documents without any nonzero count.
    pub fn from_rows(
        rows: Vec<(SparseRow, DocMeta)>,
        num_terms: usize,
        brands: Vec<BrandInfo>,
    ) -> Result<Self> {
        if num_terms == 0 {
            return Err(Error::validation("corpus needs a nonempty vocabulary"));
        }
        let mut indptr = vec![0];
        let mut terms = Vec::new();
        let mut counts = Vec::new();
        let mut brand_of = Vec::new();
        let mut labels = Vec::new();
        let mut split = Vec::new();
        let mut dropped = 0usize;
        for (mut row, meta) in rows {
            row.retain(|&(_, c)| c > 0);
            if row.is_empty() {
                dropped += 1;
                continue;
            }
            row.sort_unstable_by_key(|&(t, _)| t);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::validation(format!("duplicate term id {}", w[0].0)));
                }
            }
            for (t, c) in row {
                if t as usize >= num_terms {
                    return Err(Error::DimensionMismatch {
                        axis: "term",
                        expected: num_terms,
                        found: t as usize + 1,
                    });
                }
                terms.push(t);
                counts.push(c);
            }
            indptr.push(terms.len());
            if meta.brand as usize >= brands.len() {
                return Err(Error::validation(format!(
                    "brand id {} out of range for {} brands",
                    meta.brand,
                    brands.len()
                )));
            }
            brand_of.push(meta.brand);
            labels.push(meta.label);
            split.push(meta.split);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} documents with no in-vocabulary tokens");
        }
        if brand_of.is_empty() {
            return Err(Error::validation("corpus has no nonempty documents"));
        }
        Ok(Self {
            indptr,
            terms,
            counts,
            num_terms,
            brand_of,
            labels,
            split,
            brands,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.brand_of.len()
    }

    pub fn num_terms(&self) -> usize {
        self.num_terms
    }

    pub fn num_brands(&self) -> usize {
        self.brands.len()
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    /// Term ids and counts of document `d`.
    #[inline]
    pub fn doc(&self, d: usize) -> (&[u32], &[u32]) {
        let (a, b) = (self.indptr[d], self.indptr[d + 1]);
        (&self.terms[a..b], &self.counts[a..b])
    }

    pub fn doc_length(&self, d: usize) -> u64 {
        self.doc(d).1.iter().map(|&c| c as u64).sum()
    }

    #[inline]
    pub fn brand_of(&self, d: usize) -> usize {
        self.brand_of[d] as usize
    }

    #[inline]
    pub fn label(&self, d: usize) -> Polarity {
        self.labels[d]
    }

    #[inline]
    pub fn split(&self, d: usize) -> Split {
        self.split[d]
    }

    pub fn brands(&self) -> &[BrandInfo] {
        &self.brands
    }

    pub fn meta(&self, d: usize) -> DocMeta {
        DocMeta {
            brand: self.brand_of[d],
            label: self.labels[d],
            split: self.split[d],
        }
    }

    pub fn docs_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_docs()).filter(move |&d| self.split[d] == split)
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for l in &self.labels {
            out[l.index()] += 1;
        }
        out
    }

    /// Documents expanded to token-id sequences (each term repeated by its
    /// count, in term order), for window-based co-occurrence statistics.
    pub fn token_sequences(&self) -> Vec<Vec<u32>> {
        (0..self.num_docs())
            .map(|d| {
                let (t, c) = self.doc(d);
                t.iter()
                    .zip(c)
                    .flat_map(|(&t, &c)| std::iter::repeat_n(t, c as usize))
                    .collect()
            })
            .collect()
    }

    /// Same documents with a different train/test assignment.
    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.num_docs() {
            return Err(Error::DimensionMismatch {
                axis: "document",
                expected: self.num_docs(),
                found: split.len(),
            });
        }
        self.split = split;
        Ok(self)
    }

    pub fn with_brands(mut self, brands: Vec<BrandInfo>) -> Result<Self> {
        if brands.len() != self.brands.len() {
            return Err(Error::DimensionMismatch {
                axis: "brand",
                expected: self.brands.len(),
                found: brands.len(),
            });
        }
        self.brands = brands;
        Ok(self)
    }
}

/// Seeded uniform holdout: exactly `round(test_fraction * n)` documents are TEST.
pub fn assign_split(n: usize, test_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::validation(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = vec![Split::Train; n];
    for i in index::sample(&mut rng, n, n_test) {
        split[i] = Split::Test;
    }
    Ok(split)
}

/// Count vocabulary features per review and attach brand, label and split.
///
/// The split is drawn with [`assign_split`] over all reviews, so building the
/// vocabulary from the TRAIN reviews of the same `(test_fraction, seed)`
/// keeps test text out of the vocabulary.
pub fn vectorize(
    reviews: &[RawReview],
    vocab: &Vocabulary,
    brands: &BrandIndex,
    test_fraction: f64,
    seed: u64,
) -> Result<Corpus> {
    let split = assign_split(reviews.len(), test_fraction, seed)?;
    let mut rating_sums = vec![(0.0f64, 0usize); brands.len()];
    let mut rows = Vec::with_capacity(reviews.len());
    for (review, &s) in reviews.iter().zip(&split) {
        review.validate()?;
        let brand = brands
            .id(&review.brand)
            .ok_or_else(|| Error::validation(format!("unknown brand {:?}", review.brand)))?;
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for f in tokenize::features(&review.text) {
            if let Some(id) = vocab.id(&f) {
                *counts.entry(id).or_insert(0) += 1;
            }
        }
        let mut row: SparseRow = counts.into_iter().collect();
        row.sort_unstable();
        if s == Split::Test && !row.is_empty() {
            let e = &mut rating_sums[brand as usize];
            e.0 += review.rating as f64;
            e.1 += 1;
        }
        let meta = DocMeta {
            brand,
            label: label_from_rating(review.rating)?,
            split: s,
        };
        rows.push((row, meta));
    }
    let infos = brands
        .names()
        .iter()
        .zip(rating_sums)
        .map(|(name, (sum, n))| BrandInfo {
            name: name.clone(),
            reference_score: (n > 0).then(|| sum / n as f64),
        })
        .collect();
    Corpus::from_rows(rows, vocab.len(), infos)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub max_vocab: usize,
    pub min_count: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_vocab: 5000,
            min_count: 2,
            test_fraction: 0.10,
            seed: 0,
        }
    }
}

/// Split, build the vocabulary on TRAIN reviews, then vectorize everything.
pub fn ingest(reviews: &[RawReview], opts: &IngestOptions) -> Result<Bundle> {
    if reviews.is_empty() {
        return Err(Error::validation("no reviews to ingest"));
    }
    for (i, r) in reviews.iter().enumerate() {
        r.validate()
            .map_err(|e| Error::validation(format!("review {i}: {e}")))?;
    }
    let split = assign_split(reviews.len(), opts.test_fraction, opts.seed)?;
    let train = reviews
        .iter()
        .zip(&split)
        .filter(|(_, &s)| s == Split::Train)
        .map(|(r, _)| r);
    let vocab = build_vocabulary(train, opts.max_vocab, opts.min_count)?;
    let brands = BrandIndex::from_reviews(reviews);
    let corpus = vectorize(reviews, &vocab, &brands, opts.test_fraction, opts.seed)?;
    Ok(Bundle { vocab, corpus })
}

/// Document ids of one mini-batch together with the class each slot drew.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub docs: Vec<usize>,
    pub classes: Vec<Polarity>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn class_composition(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for c in &self.classes {
            out[c.index()] += 1;
        }
        out
    }
}

/// Oversampling batch sampler: each slot picks a class uniformly, then a
/// TRAIN document of that class uniformly with replacement.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: [Vec<usize>; 3],
}

impl BalancedSampler {
    pub fn new(corpus: &Corpus) -> Result<Self> {
        let mut by_class: [Vec<usize>; 3] = Default::default();
        for d in corpus.docs_in(Split::Train) {
            by_class[corpus.label(d).index()].push(d);
        }
        for (c, docs) in by_class.iter().enumerate() {
            if docs.is_empty() {
                return Err(Error::validation(format!(
                    "no TRAIN documents with label {}",
                    Polarity::ALL[c].as_str()
                )));
            }
        }
        Ok(Self { by_class })
    }

    pub fn class_docs(&self, class: Polarity) -> &[usize] {
        &self.by_class[class.index()]
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let mut docs = Vec::with_capacity(batch_size);
        let mut classes = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let class = Polarity::ALL[rng.random_range(0..3)];
            let pool = &self.by_class[class.index()];
            docs.push(pool[rng.random_range(0..pool.len())]);
            classes.push(class);
        }
        Batch { docs, classes }
    }
}

pub fn sample_balanced_batch<R: Rng + ?Sized>(
    corpus: &Corpus,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    Ok(BalancedSampler::new(corpus)?.sample(batch_size, rng))
}
