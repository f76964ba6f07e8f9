//! C_V topic coherence over a boolean sliding-window reference index.

use std::collections::HashMap;

use serde::Serialize;

use crate::backbone::split_words;
use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};

pub const DEFAULT_WINDOW: usize = 110;
pub const NPMI_EPS: f64 = 1e-12;

/// Positional index of a reference corpus. Every document of `n` words
/// contributes `max(1, n - window + 1)` windows; empty documents contribute
/// none.
#[derive(Debug, Clone)]
pub struct ReferenceIndex {
    window: usize,
    total_windows: u64,
    doc_lens: Vec<usize>,
    /// For each word, its `(doc, position)` occurrences in corpus order.
    postings: HashMap<String, Vec<(u32, u32)>>,
}

fn windows_in(len: usize, window: usize) -> usize {
    match len {
        0 => 0,
        n if n <= window => 1,
        n => n - window + 1,
    }
}

impl ReferenceIndex {
    pub fn build(corpus: &[DocumentRecord], window: usize) -> Result<Self> {
        let docs: Vec<Vec<String>> = corpus.iter().map(|d| split_words(&d.text)).collect();
        Self::from_words(&docs, window)
    }

    pub fn from_words(docs: &[Vec<String>], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(CwtmError::Config("window size must be at least 1".into()));
        }
        if docs.is_empty() {
            return Err(CwtmError::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut total_windows = 0u64;
        for (d, words) in docs.iter().enumerate() {
            total_windows += windows_in(words.len(), window) as u64;
            for (p, w) in words.iter().enumerate() {
                postings.entry(w.clone()).or_default().push((d as u32, p as u32));
            }
        }
        Ok(ReferenceIndex {
            window,
            total_windows,
            doc_lens: docs.iter().map(Vec::len).collect(),
            postings,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    pub fn contains(&self, word: &str) -> bool {
        self.postings.contains_key(word)
    }

    /// Window counts for a word set: `single[i]` windows contain word `i`,
    /// `joint[i][j]` windows contain both.
    pub fn counts(&self, words: &[&str]) -> (Vec<u64>, Vec<Vec<u64>>) {
        let k = words.len();
        assert!(k <= 64, "at most 64 words per query");
        // Occurrences of the query words grouped by document.
        let mut by_doc: HashMap<u32, Vec<(u32, usize)>> = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            for &(d, p) in self.postings.get(*w).map(Vec::as_slice).unwrap_or(&[]) {
                by_doc.entry(d).or_default().push((p, i));
            }
        }
        let mut masks: HashMap<u64, u64> = HashMap::new();
        for (d, mut occ) in by_doc {
            occ.sort_unstable();
            let len = self.doc_lens[d as usize];
            let n_windows = windows_in(len, self.window);
            let span = self.window.min(len) as u32;
            // Sliding window [s, s + span) with per-word occurrence counts.
            let mut inside = vec![0u32; k];
            let mut mask = 0u64;
            let (mut lo, mut hi) = (0usize, 0usize);
            for s in 0..n_windows as u32 {
                while hi < occ.len() && occ[hi].0 < s + span {
                    let i = occ[hi].1;
                    inside[i] += 1;
                    mask |= 1 << i;
                    hi += 1;
                }
                while lo < hi && occ[lo].0 < s {
                    let i = occ[lo].1;
                    inside[i] -= 1;
                    if inside[i] == 0 {
                        mask &= !(1 << i);
                    }
                    lo += 1;
                }
                if mask != 0 {
                    *masks.entry(mask).or_default() += 1;
                }
            }
        }
        let mut single = vec![0u64; k];
        let mut joint = vec![vec![0u64; k]; k];
        for (mask, n) in masks {
            for i in 0..k {
                if mask >> i & 1 == 0 {
                    continue;
                }
                single[i] += n;
                for j in 0..k {
                    if mask >> j & 1 == 1 {
                        joint[i][j] += n;
                    }
                }
            }
        }
        (single, joint)
    }
}

/// NPMI from window probabilities. Words absent from the reference give 0;
/// a pair present in every window gives 1.
pub fn npmi(p_i: f64, p_j: f64, p_ij: f64) -> f64 {
    if p_i == 0.0 || p_j == 0.0 {
        return 0.0;
    }
    if p_ij >= 1.0 {
        return 1.0;
    }
    let joint = p_ij + NPMI_EPS;
    (joint / (p_i * p_j)).ln() / -joint.ln()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coherence {
    pub value: f64,
    /// Per-word cosine against the whole set.
    pub per_word: Vec<f64>,
    /// Topic words missing from the reference corpus.
    pub missing: Vec<String>,
}

/// C_V with one-set segmentation: each word's NPMI context vector over the
/// topic words is compared by cosine with the summed vector of the set.
pub fn coherence_cv(words: &[&str], index: &ReferenceIndex) -> Result<Coherence> {
    if words.len() < 2 {
        return Err(CwtmError::Eval(format!("coherence needs at least 2 words, got {}", words.len())));
    }
    if index.total_windows() == 0 {
        return Err(CwtmError::Eval("reference corpus has no windows".into()));
    }
    let missing: Vec<String> = words.iter().filter(|w| !index.contains(w)).map(|w| w.to_string()).collect();
    if !missing.is_empty() {
        log::warn!("words absent from the reference corpus: {}", missing.join(", "));
    }
    let n = index.total_windows() as f64;
    let (single, joint) = index.counts(words);
    let k = words.len();
    let vectors: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| npmi(single[i] as f64 / n, single[j] as f64 / n, joint[i][j] as f64 / n))
                .collect()
        })
        .collect();
    let set: Vec<f64> = (0..k).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    let per_word: Vec<f64> = vectors.iter().map(|v| cosine(v, &set)).collect();
    Ok(Coherence {
        value: per_word.iter().sum::<f64>() / k as f64,
        per_word,
        missing,
    })
}
