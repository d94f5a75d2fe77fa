//! C_V-style topic coherence.
//!
//! Probabilities come from boolean sliding windows: a document of length
//! `L >= w` yields the `L - w + 1` windows starting at each position, a
//! shorter document is a single window. Each top word gets a context vector of
//! NPMI values against every word of its list; the score of a list is the mean
//! cosine between each word's vector and the sum of all vectors of the list.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 110;

/// Window occurrence counts for a fixed set of tracked words.
#[derive(Debug, Clone)]
pub struct WindowCounts {
    index: HashMap<u32, usize>,
    single: Vec<u64>,
    pair: Vec<u64>,
    windows: u64,
}

impl WindowCounts {
    pub fn new(docs: &[Vec<u32>], words: &[u32], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::validation("coherence window must be positive"));
        }
        let mut index = HashMap::new();
        for &w in words {
            let n = index.len();
            index.entry(w).or_insert(n);
        }
        let t = index.len();
        let mut single = vec![0u64; t];
        let mut pair = vec![0u64; t * t];
        let mut windows = 0u64;
        let mut present = Vec::new();
        let mut flag = vec![false; t];
        for doc in docs {
            if doc.is_empty() {
                continue;
            }
            let tracked: Vec<Option<usize>> = doc.iter().map(|w| index.get(w).copied()).collect();
            let starts = doc.len().saturating_sub(window) + 1;
            for s in 0..starts {
                windows += 1;
                present.clear();
                for &i in tracked[s..(s + window).min(doc.len())].iter().flatten() {
                    if !flag[i] {
                        flag[i] = true;
                        present.push(i);
                    }
                }
                for (a, &i) in present.iter().enumerate() {
                    single[i] += 1;
                    for &j in &present[a + 1..] {
                        pair[i * t + j] += 1;
                        pair[j * t + i] += 1;
                    }
                }
                for &i in &present {
                    flag[i] = false;
                }
            }
        }
        if windows == 0 {
            return Err(Error::validation("coherence reference corpus is empty"));
        }
        Ok(Self {
            index,
            single,
            pair,
            windows,
        })
    }

    pub fn num_windows(&self) -> u64 {
        self.windows
    }

    fn slot(&self, w: u32) -> Option<usize> {
        self.index.get(&w).copied()
    }

    /// Windows containing `w`; words not tracked count zero.
    pub fn occurrences(&self, w: u32) -> u64 {
        self.slot(w).map_or(0, |i| self.single[i])
    }

    /// Windows containing both words.
    pub fn co_occurrences(&self, a: u32, b: u32) -> u64 {
        match (self.slot(a), self.slot(b)) {
            (Some(i), Some(j)) if i == j => self.single[i],
            (Some(i), Some(j)) => self.pair[i * self.single.len() + j],
            _ => 0,
        }
    }

    /// Normalized PMI of two words that both occur. Pairs that never share a
    /// window score -1 and pairs present in every window score 1.
    pub fn npmi(&self, a: u32, b: u32) -> f64 {
        let n = self.windows as f64;
        let pa = self.occurrences(a) as f64 / n;
        let pb = self.occurrences(b) as f64 / n;
        let pab = self.co_occurrences(a, b) as f64 / n;
        if pab == 0.0 {
            return -1.0;
        }
        if pab == 1.0 {
            return 1.0;
        }
        (pab / (pa * pb)).ln() / -pab.ln()
    }

    /// Coherence of one word list; absent words get a zero context vector.
    pub fn list_coherence(&self, list: &[u32]) -> f64 {
        if list.is_empty() {
            return 0.0;
        }
        let vectors: Vec<Vec<f64>> = list
            .iter()
            .map(|&w| {
                if self.occurrences(w) == 0 {
                    log::warn!("coherence: word {w} absent from the reference corpus");
                    return vec![0.0; list.len()];
                }
                list.iter()
                    .map(|&u| if self.occurrences(u) == 0 { 0.0 } else { self.npmi(w, u) })
                    .collect()
            })
            .collect();
        let mut total = vec![0.0; list.len()];
        for v in &vectors {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        }
        let sum: f64 = vectors.iter().map(|v| cosine(v, &total)).sum();
        sum / list.len() as f64
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean coherence of `lists` against the token sequences `docs`.
pub fn topic_coherence(docs: &[Vec<u32>], lists: &[Vec<u32>], window: usize) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::validation("no word lists to score"));
    }
    let words: Vec<u32> = lists.iter().flatten().copied().collect();
    let counts = WindowCounts::new(docs, &words, window)?;
    Ok(lists.iter().map(|l| counts.list_coherence(l)).sum::<f64>() / lists.len() as f64)
}
