//! On-disk corpus bundle.
//!
//! A bundle is a directory with four text files:
//!
//! * `vocab.txt`: one token per line, the term id is the 0-based line number.
//! * `counts.txt`: `doc term count` coordinate triples, one per line.
//! * `docs.tsv`: `doc brand_id label split` per document.
//! * `brands.tsv`: `brand_id name reference_score` (`NA` when unknown).
//!
//! Lines starting with `#` in the last three files are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BrandInfo, Corpus, DocMeta, Polarity, SparseRow, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const COUNTS_FILE: &str = "counts.txt";
pub const DOCS_FILE: &str = "docs.tsv";
pub const BRANDS_FILE: &str = "brands.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub vocab: Vocabulary,
    pub corpus: Corpus,
}

fn clean(name: &str) -> String {
    name.replace(['\t', '\n', '\r'], " ")
}

pub fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    let Bundle { vocab, corpus } = bundle;
    if vocab.len() != corpus.num_terms() {
        return Err(Error::DimensionMismatch {
            axis: "term",
            expected: corpus.num_terms(),
            found: vocab.len(),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut s = String::new();
    for t in vocab.tokens() {
        s.push_str(t);
        s.push('\n');
    }
    write_atomic(&dir.join(VOCAB_FILE), s.as_bytes())?;

    let mut s = String::from("# doc term count\n");
    for d in 0..corpus.num_docs() {
        let (terms, counts) = corpus.doc(d);
        for (t, c) in terms.iter().zip(counts) {
            let _ = writeln!(s, "{d} {t} {c}");
        }
    }
    write_atomic(&dir.join(COUNTS_FILE), s.as_bytes())?;

    let mut s = String::from("# doc\tbrand_id\tlabel\tsplit\n");
    for d in 0..corpus.num_docs() {
        let m = corpus.meta(d);
        let _ = writeln!(s, "{d}\t{}\t{}\t{}", m.brand, m.label.as_str(), m.split.as_str());
    }
    write_atomic(&dir.join(DOCS_FILE), s.as_bytes())?;

    let mut s = String::from("# brand_id\tname\treference_score\n");
    for (b, info) in corpus.brands().iter().enumerate() {
        let score = info
            .reference_score
            .map_or_else(|| "NA".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(s, "{b}\t{}\t{score}", clean(&info.name));
    }
    write_atomic(&dir.join(BRANDS_FILE), s.as_bytes())?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        line,
        message: format!("missing or invalid {what}"),
    })
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocabulary::from_tokens(read(&vocab_path)?.lines().map(String::from).collect())?;

    let brands_path = dir.join(BRANDS_FILE);
    let brands_text = read(&brands_path)?;
    let mut brands = Vec::new();
    for (line, l) in data_lines(&brands_text) {
        let mut f = l.split('\t');
        let id: usize = field(&brands_path, line, f.next(), "brand id")?;
        if id != brands.len() {
            return Err(Error::Format {
                path: brands_path,
                line,
                message: format!("brand ids must be dense and ordered, expected {}", brands.len()),
            });
        }
        let name = f.next().unwrap_or_default().to_string();
        let score = match f.next().map(str::trim) {
            Some("NA") => None,
            other => Some(field::<f64>(&brands_path, line, other, "reference score")?),
        };
        brands.push(BrandInfo {
            name,
            reference_score: score,
        });
    }

    let docs_path = dir.join(DOCS_FILE);
    let docs_text = read(&docs_path)?;
    let mut metas = Vec::new();
    for (line, l) in data_lines(&docs_text) {
        let mut f = l.split('\t');
        let d: usize = field(&docs_path, line, f.next(), "doc id")?;
        if d != metas.len() {
            return Err(Error::Format {
                path: docs_path,
                line,
                message: format!("doc ids must be dense and ordered, expected {}", metas.len()),
            });
        }
        let brand: u32 = field(&docs_path, line, f.next(), "brand id")?;
        let bad = |what: &str| Error::Format {
            path: docs_path.clone(),
            line,
            message: format!("invalid {what}"),
        };
        let label = f.next().and_then(Polarity::parse).ok_or_else(|| bad("label"))?;
        let split = f.next().and_then(Split::parse).ok_or_else(|| bad("split"))?;
        metas.push(DocMeta { brand, label, split });
    }

    let counts_path = dir.join(COUNTS_FILE);
    let counts_text = read(&counts_path)?;
    let mut rows: Vec<SparseRow> = vec![Vec::new(); metas.len()];
    for (line, l) in data_lines(&counts_text) {
        let mut f = l.split_whitespace();
        let d: usize = field(&counts_path, line, f.next(), "doc id")?;
        let t: u32 = field(&counts_path, line, f.next(), "term id")?;
        let c: u32 = field(&counts_path, line, f.next(), "count")?;
        let row = rows.get_mut(d).ok_or_else(|| Error::Format {
            path: counts_path.clone(),
            line,
            message: format!("doc id {d} not in {DOCS_FILE}"),
        })?;
        row.push((t, c));
    }
    if let Some(d) = rows.iter().position(|r| r.iter().all(|&(_, c)| c == 0)) {
        return Err(Error::Format {
            path: counts_path,
            line: 0,
            message: format!("document {d} has no nonzero counts"),
        });
    }
    let corpus = Corpus::from_rows(rows.into_iter().zip(metas).collect(), vocab.len(), brands)?;
    Ok(Bundle { vocab, corpus })
}
