//! Out-of-vocabulary robustness split.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::split_words;
use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};

/// Summary of one test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetStats {
    pub size: usize,
    /// Mean number of distinct words per document.
    pub avg_vocab: f64,
    /// Mean number of distinct words per document unseen in training.
    pub avg_new_vocab: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OovSplit {
    pub train: Vec<String>,
    pub test1: Vec<String>,
    pub test2: Vec<String>,
    /// `(doc id, observed-vocabulary ratio)` for every non-training document.
    pub ratios: Vec<(String, f64)>,
    pub hi: f64,
    pub lo: f64,
    pub test1_stats: SetStats,
    pub test2_stats: SetStats,
    pub discarded: usize,
}

fn distinct(doc: &DocumentRecord) -> BTreeSet<String> {
    split_words(&doc.text).into_iter().collect()
}

/// Fraction of the document's distinct words present in `vocab`; `None` for
/// a document without words.
pub fn observed_ratio(doc: &DocumentRecord, vocab: &HashSet<String>) -> Option<f64> {
    let words = distinct(doc);
    if words.is_empty() {
        return None;
    }
    let seen = words.iter().filter(|w| vocab.contains(*w)).count();
    Some(seen as f64 / words.len() as f64)
}

/// Samples `train_size` training documents; the rest go to Test1 when at
/// least `hi` of their distinct words occur in training, to Test2 when at
/// most `lo` do, and are discarded otherwise.
pub fn oov_split(corpus: &[DocumentRecord], train_size: usize, hi: f64, lo: f64, seed: u64) -> Result<OovSplit> {
    if train_size == 0 || train_size >= corpus.len() {
        return Err(CwtmError::Config(format!(
            "train_size {train_size} must be positive and below the corpus size {}",
            corpus.len()
        )));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(CwtmError::Config(format!("need 0 <= lo < hi <= 1, got lo {lo}, hi {hi}")));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, rest) = order.split_at(train_size);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let mut rest = rest.to_vec();
    rest.sort_unstable();
    let vocab: HashSet<String> = train_idx.iter().flat_map(|&i| distinct(&corpus[i])).collect();

    let (mut test1, mut test2, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    let (mut s1, mut s2) = ((0usize, 0usize), (0usize, 0usize));
    let mut discarded = 0;
    let mut histogram = [0usize; 10];
    for &i in &rest {
        let doc = &corpus[i];
        let Some(r) = observed_ratio(doc, &vocab) else {
            discarded += 1;
            continue;
        };
        histogram[((r * 10.0) as usize).min(9)] += 1;
        ratios.push((doc.id.clone(), r));
        let words = distinct(doc);
        let new = words.iter().filter(|w| !vocab.contains(*w)).count();
        if r >= hi {
            test1.push(doc.id.clone());
            s1 = (s1.0 + words.len(), s1.1 + new);
        } else if r <= lo {
            test2.push(doc.id.clone());
            s2 = (s2.0 + words.len(), s2.1 + new);
        } else {
            discarded += 1;
        }
    }
    if test1.is_empty() || test2.is_empty() {
        let bins: Vec<String> = histogram
            .iter()
            .enumerate()
            .map(|(b, n)| format!("[{:.1},{:.1}{}: {n}", b as f64 / 10.0, (b + 1) as f64 / 10.0, if b == 9 { "]" } else { ")" }))
            .collect();
        return Err(CwtmError::Eval(format!(
            "empty test set (test1 {}, test2 {}); ratio histogram {}",
            test1.len(),
            test2.len(),
            bins.join(" ")
        )));
    }
    let stats = |ids: &Vec<String>, s: (usize, usize)| SetStats {
        size: ids.len(),
        avg_vocab: s.0 as f64 / ids.len() as f64,
        avg_new_vocab: s.1 as f64 / ids.len() as f64,
    };
    Ok(OovSplit {
        train: train_idx.iter().map(|&i| corpus[i].id.clone()).collect(),
        test1_stats: stats(&test1, s1),
        test2_stats: stats(&test2, s2),
        test1,
        test2,
        ratios,
        hi,
        lo,
        discarded,
    })
}
