use std::collections::HashMap;

use super::tokenize::features;
use super::RawReview;
use crate::error::{Error, Result};

/// Bijection between n-gram strings and dense term ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::validation("vocabulary is empty"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(Error::validation(format!("invalid token at id {i}: {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Count n-gram features over `reviews`, drop those seen fewer than
/// `min_count` times and keep the `max_vocab` most frequent.
///
/// Ids are assigned by descending frequency, ties broken lexicographically,
/// so the result is independent of review order.
pub fn build_vocabulary<'a, I>(reviews: I, max_vocab: usize, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a RawReview>,
{
    if max_vocab == 0 {
        return Err(Error::validation("max_vocab must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen_any = false;
    for review in reviews {
        seen_any = true;
        for f in features(&review.text) {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    if !seen_any {
        return Err(Error::validation("no reviews to build a vocabulary from"));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_vocab);
    if kept.is_empty() {
        return Err(Error::validation(format!(
            "vocabulary is empty after dropping tokens seen fewer than {min_count} times"
        )));
    }
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(text: &str) -> RawReview {
        RawReview {
            text: text.into(),
            rating: 3,
            brand: "b".into(),
        }
    }

    #[test]
    fn keeps_frequent_bigram() {
        let mut rs: Vec<RawReview> = (0..5).map(|_| review("it stopped working")).collect();
        rs.push(review("lovely scent"));
        let v = build_vocabulary(&rs, 5000, 2).unwrap();
        assert!(v.id("stopped working").is_some());
        assert!(v.id("stopped").is_some());
        assert!(v.id("lovely").is_none());
        assert!(v.id("lovely scent").is_none());
    }

    #[test]
    fn cap_uses_frequency_then_lexicographic_order() {
        let rs = vec![
            review("zeta zeta zeta alpha alpha beta beta"),
            review("gamma gamma"),
        ];
        // unigram counts: zeta 3, alpha 2, beta 2, gamma 2; bigrams are rarer
        let v = build_vocabulary(&rs, 3, 2).unwrap();
        assert_eq!(v.tokens(), &["zeta", "alpha", "beta"]);
    }

    #[test]
    fn empty_after_filtering_is_an_error() {
        let rs = vec![review("unique words only")];
        assert!(build_vocabulary(&rs, 10, 2).is_err());
    }

    #[test]
    fn ids_are_bijective() {
        let rs: Vec<RawReview> = (0..3).map(|_| review("great product fast shipping")).collect();
        let v = build_vocabulary(&rs, 100, 2).unwrap();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i as u32));
        }
    }
}
