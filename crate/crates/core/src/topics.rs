//! Corpus-level topic extraction: α-weighted aggregation of word-topic
//! vectors into a word-by-topic table, and ranked topic-word lists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CwtmError, Result};
use crate::geometry::SimplexVector;
use crate::model::Inference;
use crate::tensor::Matrix;

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn merge(&mut self, other: Compensated) {
        self.add(other.sum);
        self.add(-other.comp);
    }

    fn value(&self) -> f64 {
        self.sum - self.comp
    }
}

#[derive(Debug, Clone)]
struct WordRow {
    weights: Vec<Compensated>,
    count: usize,
}

/// Streaming accumulator for `weights[v][z] = Σ α θ[z]`. Partial
/// aggregators built over disjoint parts of a corpus merge associatively.
#[derive(Debug, Clone)]
pub struct TopicAggregator {
    topics: usize,
    rows: BTreeMap<String, WordRow>,
}

impl TopicAggregator {
    pub fn new(topics: usize) -> Self {
        TopicAggregator {
            topics,
            rows: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, word: &str, theta: &[f64], alpha: f64) -> Result<()> {
        if theta.len() != self.topics {
            return Err(CwtmError::Shape(format!("topic vector of length {} for {} topics", theta.len(), self.topics)));
        }
        let z = self.topics;
        let row = self.rows.entry(word.to_string()).or_insert_with(|| WordRow {
            weights: vec![Compensated::default(); z],
            count: 0,
        });
        for (acc, t) in row.weights.iter_mut().zip(theta) {
            acc.add(alpha * t);
        }
        row.count += 1;
        Ok(())
    }

    pub fn add_inference(&mut self, inf: &Inference) -> Result<()> {
        for (w, a) in inf.words.iter().zip(&inf.weights.alpha) {
            self.add(&w.word, w.theta.as_slice(), *a)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: TopicAggregator) -> Result<()> {
        if other.topics != self.topics {
            return Err(CwtmError::Shape("cannot merge aggregators with different topic counts".into()));
        }
        for (word, row) in other.rows {
            match self.rows.get_mut(&word) {
                Some(mine) => {
                    for (a, b) in mine.weights.iter_mut().zip(row.weights) {
                        a.merge(b);
                    }
                    mine.count += row.count;
                }
                None => {
                    self.rows.insert(word, row);
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TopicWordMatrix> {
        if self.rows.is_empty() {
            return Err(CwtmError::Eval("no word occurrences to aggregate".into()));
        }
        let mut words = Vec::with_capacity(self.rows.len());
        let mut counts = Vec::with_capacity(self.rows.len());
        let mut data = Vec::with_capacity(self.rows.len() * self.topics);
        for (w, row) in self.rows {
            words.push(w);
            counts.push(row.count);
            data.extend(row.weights.iter().map(Compensated::value));
        }
        let weights = Matrix::from_vec(words.len(), self.topics, data);
        Ok(TopicWordMatrix { words, weights, counts })
    }
}

/// Aggregates a stream of `(word, θ, α)` occurrences in one pass.
pub fn aggregate<'a, I>(topics: usize, occurrences: I) -> Result<TopicWordMatrix>
where
    I: IntoIterator<Item = (&'a str, &'a [f64], f64)>,
{
    let mut agg = TopicAggregator::new(topics);
    for (w, t, a) in occurrences {
        agg.add(w, t, a)?;
    }
    agg.finish()
}

/// Word-by-topic weights. Rows are sorted by word.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordMatrix {
    pub words: Vec<String>,
    /// `V × Z`, non-negative.
    pub weights: Matrix,
    pub counts: Vec<usize>,
}

/// Which words may appear in a ranked topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicFilter {
    pub stoplist: HashSet<String>,
    pub min_count: usize,
    /// Drop this many of the most frequent words (ties broken
    /// lexicographically).
    pub drop_most_frequent: usize,
    /// Rank by mean weight per occurrence instead of the summed weight.
    pub normalize_by_count: bool,
}

impl Default for TopicFilter {
    fn default() -> Self {
        TopicFilter {
            stoplist: HashSet::new(),
            min_count: 1,
            drop_most_frequent: 10,
            normalize_by_count: false,
        }
    }
}

impl TopicFilter {
    /// Keeps every word.
    pub fn none() -> Self {
        TopicFilter {
            drop_most_frequent: 0,
            ..TopicFilter::default()
        }
    }

    pub fn with_stoplist(mut self, words: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stoplist.extend(words.into_iter().map(Into::into));
        self
    }
}

/// Reads a stoplist: one word per line, blank lines ignored.
pub fn read_stoplist(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| CwtmError::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub index: usize,
    pub top_words: Vec<(String, f64)>,
    /// Fewer than the requested number of words survived the filter.
    pub short: bool,
}

impl Topic {
    pub fn words(&self) -> Vec<&str> {
        self.top_words.iter().map(|(w, _)| w.as_str()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct WordJson {
    word: String,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct TopicJson {
    topic: usize,
    words: Vec<WordJson>,
}

/// `[{topic, words: [{word, weight}]}]`.
pub fn topics_to_json(topics: &[Topic]) -> Result<String> {
    let out: Vec<TopicJson> = topics
        .iter()
        .map(|t| TopicJson {
            topic: t.index,
            words: t
                .top_words
                .iter()
                .map(|(w, v)| WordJson {
                    word: w.clone(),
                    weight: *v,
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&out)?)
}

pub fn topics_from_json(text: &str) -> Result<Vec<Topic>> {
    let parsed: Vec<TopicJson> = serde_json::from_str(text)?;
    Ok(parsed
        .into_iter()
        .map(|t| Topic {
            index: t.topic,
            top_words: t.words.into_iter().map(|w| (w.word, w.weight)).collect(),
            short: false,
        })
        .collect())
}

impl TopicWordMatrix {
    pub fn num_topics(&self) -> usize {
        self.weights.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn eligible(&self, filter: &TopicFilter) -> Vec<usize> {
        let mut by_freq: Vec<usize> = (0..self.len()).collect();
        by_freq.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then_with(|| self.words[a].cmp(&self.words[b])));
        let dropped: HashSet<usize> = by_freq.into_iter().take(filter.drop_most_frequent).collect();
        (0..self.len())
            .filter(|i| !dropped.contains(i))
            .filter(|&i| self.counts[i] >= filter.min_count && !filter.stoplist.contains(&self.words[i]))
            .collect()
    }

    /// The `k` highest-weighted words of topic `z` that pass `filter`.
    pub fn top_words(&self, z: usize, k: usize, filter: &TopicFilter) -> Result<Topic> {
        if k == 0 {
            return Err(CwtmError::Config("k must be at least 1".into()));
        }
        if z >= self.num_topics() {
            return Err(CwtmError::Config(format!("topic {z} out of range for {} topics", self.num_topics())));
        }
        let score = |i: usize| {
            let w = self.weights.get(i, z);
            if filter.normalize_by_count {
                w / self.counts[i] as f64
            } else {
                w
            }
        };
        let mut ranked: Vec<(usize, f64)> = self.eligible(filter).into_iter().map(|i| (i, score(i))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.words[a.0].cmp(&self.words[b.0])));
        let short = ranked.len() < k;
        if short {
            log::warn!("topic {z}: only {} words pass the filter, {k} requested", ranked.len());
        }
        ranked.truncate(k);
        Ok(Topic {
            index: z,
            top_words: ranked.into_iter().map(|(i, s)| (self.words[i].clone(), s)).collect(),
            short,
        })
    }

    pub fn all_topics(&self, k: usize, filter: &TopicFilter) -> Result<Vec<Topic>> {
        (0..self.num_topics()).map(|z| self.top_words(z, k, filter)).collect()
    }

    /// `φ_z`: column `z` normalized over the vocabulary, one per topic.
    pub fn normalize_phi(&self) -> Result<Vec<SimplexVector>> {
        (0..self.num_topics())
            .map(|z| {
                let col: Vec<f64> = (0..self.len()).map(|v| self.weights.get(v, z)).collect();
                let sum: f64 = col.iter().sum();
                if !(sum > 0.0) {
                    return Err(CwtmError::DegenerateTopic(z));
                }
                SimplexVector::new(col.into_iter().map(|w| w / sum).collect())
            })
            .collect()
    }
}

/// Per-topic embeddings of topic words: for topic `z` and word `v`, the mean
/// of `v`'s contextual embeddings weighted by `α · θ[z]` of each occurrence.
#[derive(Debug, Clone)]
pub struct TopicEmbeddingAggregator {
    wanted: HashMap<String, Vec<usize>>,
    sums: HashMap<(usize, String), (Vec<f64>, f64)>,
}

impl TopicEmbeddingAggregator {
    pub fn new(topics: &[Topic]) -> Self {
        let mut wanted: HashMap<String, Vec<usize>> = HashMap::new();
        for t in topics {
            for (w, _) in &t.top_words {
                wanted.entry(w.clone()).or_default().push(t.index);
            }
        }
        TopicEmbeddingAggregator {
            wanted,
            sums: HashMap::new(),
        }
    }

    pub fn add_inference(&mut self, inf: &Inference) {
        for (i, w) in inf.words.iter().enumerate() {
            let Some(topics) = self.wanted.get(&w.word) else { continue };
            let row = inf.embeddings.row(i);
            let alpha = inf.weights.alpha[i];
            for &z in topics {
                let weight = alpha * w.theta.as_slice()[z];
                let (sum, total) = self
                    .sums
                    .entry((z, w.word.clone()))
                    .or_insert_with(|| (vec![0.0; row.len()], 0.0));
                for (s, e) in sum.iter_mut().zip(row) {
                    *s += weight * e;
                }
                *total += weight;
            }
        }
    }

    pub fn finish(self) -> TopicEmbeddings {
        let table = self
            .sums
            .into_iter()
            .filter(|(_, (_, total))| *total > 0.0)
            .map(|(key, (sum, total))| (key, sum.into_iter().map(|s| s / total).collect()))
            .collect();
        TopicEmbeddings { table }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TopicEmbeddings {
    table: HashMap<(usize, String), Vec<f64>>,
}

impl TopicEmbeddings {
    pub fn get(&self, topic: usize, word: &str) -> Option<&[f64]> {
        self.table.get(&(topic, word.to_string())).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[(&str, Vec<f64>, usize)]) -> TopicWordMatrix {
        let z = rows[0].1.len();
        TopicWordMatrix {
            words: rows.iter().map(|r| r.0.to_string()).collect(),
            weights: Matrix::from_vec(rows.len(), z, rows.iter().flat_map(|r| r.1.clone()).collect()),
            counts: rows.iter().map(|r| r.2).collect(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let m = aggregate(2, [("apple", &[0.9, 0.1][..], 0.5)]).unwrap();
        assert!((m.weights.get(0, 0) - 0.45).abs() < 1e-12 && (m.weights.get(0, 1) - 0.05).abs() < 1e-12);
        let m = aggregate(2, [("x", &[1.0, 0.0][..], 1.0), ("x", &[0.0, 1.0][..], 1.0)]).unwrap();
        assert_eq!(m.weights.row(0), &[1.0, 1.0]);
        assert_eq!(m.counts, vec![2]);
        assert!(aggregate(2, std::iter::empty()).is_err());
    }

    #[test]
    fn top_words_examples() {
        let m = matrix(&[("a", vec![0.9, 0.0], 1), ("b", vec![0.5, 0.0], 1)]);
        let t = m.top_words(0, 2, &TopicFilter::none().with_stoplist(["b"])).unwrap();
        assert_eq!(t.words(), vec!["a"]);
        assert!(t.short);

        let m = matrix(&[("y", vec![0.5], 1), ("x", vec![0.5], 1)]);
        assert_eq!(m.top_words(0, 2, &TopicFilter::none()).unwrap().words(), vec!["x", "y"]);

        let rows: Vec<(String, Vec<f64>, usize)> = (0..100).map(|i| (format!("w{i:03}"), vec![(i * 37 % 100) as f64], 1)).collect();
        let refs: Vec<(&str, Vec<f64>, usize)> = rows.iter().map(|(w, v, c)| (w.as_str(), v.clone(), *c)).collect();
        let t = matrix(&refs).top_words(0, 10, &TopicFilter::none()).unwrap();
        assert_eq!(t.top_words.len(), 10);
        assert!(!t.short);
        assert!(t.top_words.windows(2).all(|p| p[0].1 >= p[1].1));
        assert!(matrix(&refs).top_words(0, 0, &TopicFilter::none()).is_err());
    }

    #[test]
    fn default_filter_drops_frequent_and_rare() {
        let rows: Vec<(String, Vec<f64>, usize)> = (0..15).map(|i| (format!("w{i:02}"), vec![i as f64], 15 - i)).collect();
        let refs: Vec<(&str, Vec<f64>, usize)> = rows.iter().map(|(w, v, c)| (w.as_str(), v.clone(), *c)).collect();
        let m = matrix(&refs);
        let t = m.top_words(0, 10, &TopicFilter::default()).unwrap();
        assert_eq!(t.words(), vec!["w14", "w13", "w12", "w11", "w10"]);
        let f = TopicFilter {
            min_count: 3,
            ..TopicFilter::default()
        };
        assert_eq!(m.top_words(0, 10, &f).unwrap().words(), vec!["w12", "w11", "w10"]);
        let f = TopicFilter {
            normalize_by_count: true,
            ..TopicFilter::none()
        };
        assert_eq!(m.top_words(0, 1, &f).unwrap().words(), vec!["w14"]);
    }

    #[test]
    fn phi_examples() {
        let m = matrix(&[("a", vec![1.0], 1), ("b", vec![3.0], 1)]);
        assert_eq!(m.normalize_phi().unwrap()[0].as_slice(), &[0.25, 0.75]);
        let m = matrix(&[("a", vec![2.0], 1)]);
        assert_eq!(m.normalize_phi().unwrap()[0].as_slice(), &[1.0]);
        let m = matrix(&[("a", vec![1.0, 0.0], 1), ("b", vec![3.0, 0.0], 1)]);
        assert!(matches!(m.normalize_phi(), Err(CwtmError::DegenerateTopic(1))));
    }

    #[test]
    fn json_round_trip() {
        let t = vec![Topic {
            index: 2,
            top_words: vec![("a".into(), 0.5), ("b".into(), 0.25)],
            short: false,
        }];
        let text = topics_to_json(&t).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v[0]["topic"], 2);
        assert_eq!(v[0]["words"][1]["word"], "b");
        assert_eq!(topics_from_json(&text).unwrap(), t);
    }

    #[test]
    fn hard_assignments_match_counting() {
        // One-hot θ with α = 1 turns the weights into topic-word counts.
        let occ: Vec<(String, usize)> = (0..200).map(|i| (format!("w{}", (i * 7) % 13), (i * 5) % 3)).collect();
        let onehots: Vec<Vec<f64>> = occ.iter().map(|(_, z)| (0..3).map(|k| (k == *z) as u8 as f64).collect()).collect();
        let m = aggregate(3, occ.iter().zip(&onehots).map(|((w, _), t)| (w.as_str(), t.as_slice(), 1.0))).unwrap();
        for z in 0..3 {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (w, k) in &occ {
                if *k == z {
                    *counts.entry(w).or_default() += 1;
                }
            }
            let mut want: Vec<(&str, usize)> = counts.into_iter().collect();
            want.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let got = m.top_words(z, 5, &TopicFilter::none()).unwrap();
            let want: Vec<&str> = want.iter().take(5).map(|p| p.0).collect();
            assert_eq!(got.words(), want);
        }
    }

    fn occurrences() -> impl Strategy<Value = Vec<(u8, Vec<f64>, f64)>> {
        proptest::collection::vec((0u8..6, proptest::collection::vec(0.0f64..1.0, 3), 0.01f64..1.0), 1..60)
    }

    proptest! {
        #[test]
        fn partition_merge_matches_single_pass(occ in occurrences(), split in 0usize..60) {
            let occ: Vec<(String, Vec<f64>, f64)> = occ.into_iter().map(|(w, t, a)| {
                let s: f64 = t.iter().sum::<f64>() + 1e-9;
                (format!("w{w}"), t.iter().map(|x| (x + 1e-9 / 3.0) / s).collect(), a)
            }).collect();
            let split = split.min(occ.len());
            let whole = aggregate(3, occ.iter().map(|(w, t, a)| (w.as_str(), t.as_slice(), *a))).unwrap();
            let mut left = TopicAggregator::new(3);
            let mut right = TopicAggregator::new(3);
            for (i, (w, t, a)) in occ.iter().enumerate() {
                if i < split { left.add(w, t, *a).unwrap() } else { right.add(w, t, *a).unwrap() }
            }
            right.merge(left).unwrap();
            let merged = right.finish().unwrap();
            prop_assert_eq!(&merged.words, &whole.words);
            prop_assert_eq!(&merged.counts, &whole.counts);
            for (a, b) in merged.weights.data().iter().zip(whole.weights.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for (v, w) in whole.words.iter().enumerate() {
                let alpha_sum: f64 = occ.iter().filter(|o| &o.0 == w).map(|o| o.2).sum();
                prop_assert!((whole.weights.row(v).iter().sum::<f64>() - alpha_sum).abs() < 1e-9);
            }
        }

        #[test]
        fn stoplist_keeps_relative_order(weights in proptest::collection::vec(0.0f64..1.0, 12), stop in proptest::collection::btree_set(0usize..12, 0..6)) {
            let rows: Vec<(String, Vec<f64>, usize)> = weights.iter().enumerate().map(|(i, w)| (format!("w{i:02}"), vec![*w], 1)).collect();
            let refs: Vec<(&str, Vec<f64>, usize)> = rows.iter().map(|(w, v, c)| (w.as_str(), v.clone(), *c)).collect();
            let m = matrix(&refs);
            let before = m.top_words(0, 12, &TopicFilter::none()).unwrap();
            let stopped: HashSet<String> = stop.iter().map(|i| format!("w{i:02}")).collect();
            let after = m.top_words(0, 12, &TopicFilter { stoplist: stopped.clone(), ..TopicFilter::none() }).unwrap();
            let kept: Vec<&str> = before.words().into_iter().filter(|w| !stopped.contains(*w)).collect();
            prop_assert_eq!(after.words(), kept);
        }
    }
}
