use std::collections::HashMap;

use crate::error::{Error, Result};

/// Topic uniqueness over the polarity-swept word lists of each topic.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessScore {
    pub tu: f64,
    /// `counts[k][j][i]`: lists of topic `k` containing word `i` of list `j`.
    pub counts: Vec<Vec<Vec<usize>>>,
}

/// `lists[k]` holds the word lists of topic `k` (one per sweep value). Each
/// slot contributes `1 / cnt`, where `cnt` is the number of lists of the same
/// topic containing that word; the score is the mean over all slots.
pub fn topic_uniqueness(lists: &[Vec<Vec<u32>>]) -> Result<UniquenessScore> {
    let slots: usize = lists.iter().flatten().map(Vec::len).sum();
    if slots == 0 {
        return Err(Error::validation("topic uniqueness needs at least one word"));
    }
    let mut total = 0.0;
    let mut counts = Vec::with_capacity(lists.len());
    for topic in lists {
        let mut cnt: HashMap<u32, usize> = HashMap::new();
        for list in topic {
            let mut seen = list.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != list.len() {
                return Err(Error::validation("topic word list repeats a word"));
            }
            for w in seen {
                *cnt.entry(w).or_default() += 1;
            }
        }
        let per: Vec<Vec<usize>> = topic
            .iter()
            .map(|list| list.iter().map(|w| cnt[w]).collect())
            .collect();
        total += per.iter().flatten().map(|&c| 1.0 / c as f64).sum::<f64>();
        counts.push(per);
    }
    Ok(UniquenessScore {
        tu: total / slots as f64,
        counts,
    })
}
