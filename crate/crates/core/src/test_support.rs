//! Fixtures shared by unit tests.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BrandInfo, Corpus, DocMeta, Polarity, Split};
use crate::model::VariationalParams;
use crate::sentiment::SentimentClassifier;

/// Corpus from a dense count matrix; all docs TRAIN unless `test` is set.
pub fn dense_corpus(counts: &Array2<u32>, brands: &[u32], labels: &[Polarity], test: &[usize]) -> Corpus {
    let num_brands = brands.iter().copied().max().unwrap_or(0) as usize + 1;
    let rows = counts
        .outer_iter()
        .enumerate()
        .map(|(d, r)| {
            let row = r
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(t, &c)| (t as u32, c))
                .collect();
            let meta = DocMeta {
                brand: brands[d],
                label: labels[d],
                split: if test.contains(&d) { Split::Test } else { Split::Train },
            };
            (row, meta)
        })
        .collect();
    let infos = (0..num_brands)
        .map(|b| BrandInfo {
            name: format!("brand{b}"),
            reference_score: None,
        })
        .collect();
    Corpus::from_rows(rows, counts.ncols(), infos).unwrap()
}

/// Single-brand NEU corpus.
pub fn plain_corpus(counts: &Array2<u32>) -> Corpus {
    let n = counts.nrows();
    dense_corpus(counts, &vec![0; n], &vec![Polarity::Neu; n], &[])
}

/// D=4, V=6, K=2, B=2 with random parameters of moderate size.
pub fn tiny_instance(seed: u64) -> (Corpus, VariationalParams<f64>, SentimentClassifier<f64>) {
    let counts = ndarray::array![
        [2u32, 0, 1, 0, 3, 0],
        [0, 1, 0, 4, 0, 1],
        [1, 1, 0, 0, 0, 2],
        [0, 0, 5, 1, 1, 0],
    ];
    let corpus = dense_corpus(
        &counts,
        &[0, 1, 1, 0],
        &[Polarity::Pos, Polarity::Neg, Polarity::Neu, Polarity::Neg],
        &[3],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let (d, k, v, b) = (4, 2, 6, 2);
    let params = VariationalParams {
        theta_loc: Array2::from_shape_fn((d, k), |_| u(-0.5, 0.5)),
        theta_scale_raw: Array2::from_shape_fn((d, k), |_| u(-2.0, -0.5)),
        beta_loc: Array2::from_shape_fn((k, v), |_| u(-1.0, 0.3)),
        beta_scale_raw: Array2::from_shape_fn((k, v), |_| u(-2.0, -0.5)),
        eta_loc: Array2::from_shape_fn((k, v), |_| u(-1.0, 1.0)),
        eta_scale_raw: Array2::from_shape_fn((k, v), |_| u(-2.0, -0.5)),
        x_loc: Array1::from_shape_fn(b, |_| u(-1.0, 1.0)),
        x_scale_raw: Array1::from_shape_fn(b, |_| u(-2.0, -0.5)),
    };
    let mut clf = SentimentClassifier::zeros(v);
    clf.weights.mapv_inplace(|_| u(-1.0, 1.0));
    clf.bias.mapv_inplace(|_| u(-0.3, 0.3));
    (corpus, params, clf)
}
