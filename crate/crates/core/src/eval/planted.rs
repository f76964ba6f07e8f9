//! Synthetic corpora with known topics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};
use crate::geometry::DirichletPrior;

/// Share of a topic's probability mass on its own word group.
pub const GROUP_MASS: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub topics: usize,
    pub vocab_size: usize,
    pub docs_per_class: usize,
    pub doc_len: usize,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            topics: 3,
            vocab_size: 300,
            docs_per_class: 200,
            doc_len: 40,
            concentration: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub documents: Vec<DocumentRecord>,
    pub vocab: Vec<String>,
    /// `K × V` topic-word distributions.
    pub topic_words: Vec<Vec<f64>>,
    /// Per-document topic mixture.
    pub mixtures: Vec<Vec<f64>>,
    /// Dominant topic of each document.
    pub labels: Vec<usize>,
}

pub fn planted_word(idx: usize) -> String {
    format!("w{idx:04}")
}

pub fn class_label(topic: usize) -> String {
    format!("topic{topic}")
}

impl PlantedCorpus {
    /// The `k` most probable words of topic `t`, ties by word.
    pub fn top_words(&self, t: usize, k: usize) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.vocab.len()).collect();
        let p = &self.topic_words[t];
        idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then_with(|| self.vocab[a].cmp(&self.vocab[b])));
        idx.into_iter().take(k).map(|i| self.vocab[i].as_str()).collect()
    }
}

/// LDA-style corpus. Word `i` belongs to group `i mod K`; topic `k` puts
/// [`GROUP_MASS`] on its group with Zipf weights and spreads the rest
/// uniformly. Each class gets `docs_per_class` documents whose largest
/// mixture weight is on that class's topic.
pub fn make_planted_corpus(config: &PlantedConfig) -> Result<PlantedCorpus> {
    let k = config.topics;
    let v = config.vocab_size;
    if k < 2 {
        return Err(CwtmError::Config("a planted corpus needs at least 2 topics".into()));
    }
    if v < 2 * k {
        return Err(CwtmError::Config(format!("vocabulary of {v} words cannot hold {k} topic groups")));
    }
    if config.doc_len == 0 || config.docs_per_class == 0 {
        return Err(CwtmError::Config("documents must be non-empty".into()));
    }
    let prior = DirichletPrior::new(config.concentration, k)?;
    let vocab: Vec<String> = (0..v).map(planted_word).collect();
    let topic_words: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let group: Vec<usize> = (t..v).step_by(k).collect();
            let zipf_total: f64 = (1..=group.len()).map(|r| 1.0 / r as f64).sum();
            let mut p = vec![(1.0 - GROUP_MASS) / v as f64; v];
            for (rank, &w) in group.iter().enumerate() {
                p[w] += GROUP_MASS / (rank + 1) as f64 / zipf_total;
            }
            p
        })
        .collect();
    let samplers: Vec<WeightedIndex<f64>> = topic_words
        .iter()
        .map(|p| WeightedIndex::new(p).expect("positive weights"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut documents, mut mixtures, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..k * config.docs_per_class {
        let class = i % k;
        let mut theta = prior.sample(&mut rng).into_inner();
        let top = (0..k).fold(0, |b, j| if theta[j] > theta[b] { j } else { b });
        theta.swap(top, class);
        let topic = WeightedIndex::new(&theta).expect("simplex weights");
        let words: Vec<&str> = (0..config.doc_len)
            .map(|_| vocab[samplers[topic.sample(&mut rng)].sample(&mut rng)].as_str())
            .collect();
        documents.push(DocumentRecord::new(format!("doc{i:05}"), words.join(" ")).with_label(class_label(class)));
        mixtures.push(theta);
        labels.push(class);
    }
    Ok(PlantedCorpus {
        documents,
        vocab,
        topic_words,
        mixtures,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let cfg = PlantedConfig {
            docs_per_class: 30,
            ..PlantedConfig::default()
        };
        let c = make_planted_corpus(&cfg).unwrap();
        assert_eq!(c.documents.len(), 90);
        for t in 0..3 {
            assert_eq!(c.labels.iter().filter(|&&l| l == t).count(), 30);
        }
        for (m, &l) in c.mixtures.iter().zip(&c.labels) {
            assert!(m.iter().all(|&x| x <= m[l]));
        }
        assert_eq!(make_planted_corpus(&cfg).unwrap(), c);
        assert!(c.top_words(1, 10).iter().all(|w| w[1..].parse::<usize>().unwrap() % 3 == 1));
    }

    #[test]
    fn sparse_limit_gives_single_topic_docs() {
        let cfg = PlantedConfig {
            concentration: 1e-4,
            docs_per_class: 10,
            ..PlantedConfig::default()
        };
        let c = make_planted_corpus(&cfg).unwrap();
        for (m, &l) in c.mixtures.iter().zip(&c.labels) {
            assert!(m[l] > 0.999);
        }
    }

    #[test]
    fn rejects_small_vocab() {
        let cfg = PlantedConfig {
            vocab_size: 4,
            ..PlantedConfig::default()
        };
        assert!(make_planted_corpus(&cfg).is_err());
    }
}
