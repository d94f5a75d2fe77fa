//! Lowercasing tokenizer and contiguous n-gram extraction.

use std::collections::HashSet;
use std::sync::OnceLock;

/// English stopwords (the common NLTK list) with negation markers kept out,
/// since "not", "no" and the `n't` stems carry polarity in reviews.
const STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
    "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself",
    "it", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
    "who", "whom", "this", "that", "these", "those", "am", "is", "are", "was", "were", "be",
    "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
    "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by",
    "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
    "under", "again", "further", "then", "once", "here", "there", "when", "where", "why",
    "how", "all", "any", "both", "each", "few", "more", "most", "other", "some", "such",
    "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will", "just",
    "should", "now", "d", "ll", "m", "o", "re", "ve", "y",
];

/// Largest n-gram order extracted.
pub const MAX_NGRAM: usize = 3;

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercase, split on non-alphanumerics and drop stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !is_stopword(t))
        .collect()
}

/// All 1..=MAX_NGRAM grams over the contiguous post-stopword tokens, in
/// text order (unigrams of a position before the longer grams starting there).
pub fn ngrams(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() * MAX_NGRAM);
    for start in 0..tokens.len() {
        for n in 1..=MAX_NGRAM {
            if start + n > tokens.len() {
                break;
            }
            out.push(tokens[start..start + n].join(" "));
        }
    }
    out
}

/// Tokenize then expand to n-grams.
pub fn features(text: &str) -> Vec<String> {
    ngrams(&tokenize(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_drops_stopwords() {
        assert_eq!(
            tokenize("The dryer STOPPED working, after a week!"),
            vec!["dryer", "stopped", "working", "week"]
        );
    }

    #[test]
    fn negations_survive() {
        assert_eq!(tokenize("did not like it"), vec!["not", "like"]);
        assert_eq!(tokenize("doesn't work"), vec!["doesn", "work"]);
    }

    #[test]
    fn ngrams_over_contiguous_tokens() {
        let toks: Vec<String> = ["a1", "b2", "c3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            ngrams(&toks),
            vec!["a1", "a1 b2", "a1 b2 c3", "b2", "b2 c3", "c3"]
        );
        assert!(ngrams(&[]).is_empty());
    }
}
