//! Word-level contextual embeddings, from either the built-in toy transformer
//! or a precomputed embedding cache.

pub mod cache;
pub mod toy;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};
use crate::nn::ParamStore;
use crate::tensor::Matrix;

pub use cache::EmbeddingCache;
pub use toy::{select_masks, MaskedPosition, ToyBackbone};
pub use vocab::{build_vocab, split_words, tokenize, TokenizedDoc, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneMode {
    Toy,
    Cached,
}

impl BackboneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneMode::Toy => "toy",
            BackboneMode::Cached => "cached",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub mode: BackboneMode,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub freeze_base: bool,
    pub mask_rate: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            mode: BackboneMode::Toy,
            dim: 64,
            layers: 2,
            heads: 4,
            vocab_size: 5000,
            prompt_len: 10,
            freeze_base: true,
            mask_rate: 0.15,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == BackboneMode::Toy {
            if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
                return Err(CwtmError::Config(format!(
                    "dim {} must be a positive multiple of heads {}",
                    self.dim, self.heads
                )));
            }
            if self.vocab_size == 0 {
                return Err(CwtmError::Config("vocab_size must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(CwtmError::Config(format!("mask_rate {} must be in [0, 1)", self.mask_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Toy,
    Cached,
}

/// Per-word embedding rows of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEmbeddingDoc {
    pub doc_id: String,
    pub words: Vec<String>,
    /// `words.len() × dim`.
    pub embeddings: Matrix,
    pub source: EmbeddingSource,
}

impl ContextualEmbeddingDoc {
    pub fn new(doc_id: impl Into<String>, words: Vec<String>, embeddings: Matrix, source: EmbeddingSource) -> Result<Self> {
        if embeddings.rows() != words.len() {
            return Err(CwtmError::Shape(format!(
                "{} embedding rows for {} words",
                embeddings.rows(),
                words.len()
            )));
        }
        if !embeddings.all_finite() {
            return Err(CwtmError::Numeric("non-finite embedding entry".into()));
        }
        Ok(ContextualEmbeddingDoc {
            doc_id: doc_id.into(),
            words,
            embeddings,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Outcome of [`Backbone::mlm_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmLoss {
    pub value: f64,
    pub masked: usize,
    /// Set when no position was masked; the loss is then reported as 0.
    pub nothing_masked: bool,
}

/// Where the engine's word embeddings come from.
#[derive(Debug, Clone)]
pub enum Backbone {
    Toy(ToyBackbone),
    Cached(EmbeddingCache),
}

/// Embedding rows recorded on a graph, with their words.
#[derive(Debug, Clone)]
pub struct GraphEmbedding {
    pub rows: Var,
    pub words: Vec<String>,
}

impl Backbone {
    pub fn mode(&self) -> BackboneMode {
        match self {
            Backbone::Toy(_) => BackboneMode::Toy,
            Backbone::Cached(_) => BackboneMode::Cached,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Backbone::Toy(t) => t.dim(),
            Backbone::Cached(c) => c.dim(),
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            Backbone::Toy(t) => Some(t.vocab()),
            Backbone::Cached(_) => None,
        }
    }

    pub fn tokenize(&self, doc: &DocumentRecord) -> TokenizedDoc {
        match self {
            Backbone::Toy(t) => tokenize(doc, t.vocab()),
            Backbone::Cached(_) => {
                let words = split_words(&doc.text);
                let n = words.len();
                TokenizedDoc {
                    doc_id: doc.id.clone(),
                    token_ids: vec![vocab::UNK_ID; n],
                    word_spans: (0..n).map(|i| i..i + 1).collect(),
                    mask: vec![true; n],
                    words,
                }
            }
        }
    }

    /// Records the embeddings of one tokenized document on `g`. In cached
    /// mode the stored rows enter as constants, looked up by document id.
    pub fn embed_graph(&self, g: &mut Graph, store: &ParamStore, doc: &TokenizedDoc) -> Result<GraphEmbedding> {
        match self {
            Backbone::Toy(t) => Ok(GraphEmbedding {
                rows: t.forward_words(g, store, &doc.token_ids),
                words: doc.words.clone(),
            }),
            Backbone::Cached(c) => {
                let e = c.get(&doc.doc_id)?;
                Ok(GraphEmbedding {
                    rows: g.constant(e.embeddings.clone()),
                    words: e.words.clone(),
                })
            }
        }
    }

    /// Evaluation-mode embeddings for a batch of documents.
    pub fn embed(&self, store: &ParamStore, docs: &[TokenizedDoc]) -> Result<Vec<ContextualEmbeddingDoc>> {
        docs.iter()
            .map(|doc| match self {
                Backbone::Toy(t) => {
                    let mut g = Graph::new();
                    let rows = t.forward_words(&mut g, store, &doc.token_ids);
                    ContextualEmbeddingDoc::new(
                        doc.doc_id.clone(),
                        doc.words.clone(),
                        g.value(rows).clone(),
                        EmbeddingSource::Toy,
                    )
                }
                Backbone::Cached(c) => c.get(&doc.doc_id).cloned(),
            })
            .collect()
    }

    /// Records the MLM loss on `g`. `None` when nothing was masked.
    pub fn mlm_graph(&self, g: &mut Graph, store: &ParamStore, docs: &[TokenizedDoc], seed: u64) -> Result<toy::MlmPass> {
        match self {
            Backbone::Toy(t) => Ok(t.mlm_pass(g, store, docs, seed)),
            Backbone::Cached(_) => Err(CwtmError::UnsupportedMode {
                mode: "cached",
                what: "masked language modelling".into(),
            }),
        }
    }

    pub fn mlm_loss(&self, store: &ParamStore, docs: &[TokenizedDoc], seed: u64) -> Result<MlmLoss> {
        let mut g = Graph::new();
        let pass = self.mlm_graph(&mut g, store, docs, seed)?;
        Ok(match pass.loss {
            Some(l) => MlmLoss {
                value: g.scalar(l),
                masked: pass.masked,
                nothing_masked: false,
            },
            None => {
                log::warn!("MLM batch has no masked positions; loss reported as 0");
                MlmLoss {
                    value: 0.0,
                    masked: 0,
                    nothing_masked: true,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Adam, ParamGroup};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> BackboneConfig {
        BackboneConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            prompt_len: 3,
            ..BackboneConfig::default()
        }
    }

    fn corpus() -> Vec<DocumentRecord> {
        let texts = [
            "the bank raised interest rates on loans",
            "we sat on the river bank and watched the water",
            "stocks and loans and interest",
            "fish swim in the river water",
        ];
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| DocumentRecord::new(format!("d{i}"), *t))
            .collect()
    }

    fn toy(config: &BackboneConfig) -> (ParamStore, Backbone) {
        let vocab = build_vocab(&corpus(), config.vocab_size).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = ToyBackbone::new(&mut store, config, vocab, &mut rng).unwrap();
        (store, Backbone::Toy(t))
    }

    #[test]
    fn identical_docs_identical_rows() {
        let (store, bb) = toy(&small_config());
        let a = bb.tokenize(&DocumentRecord::new("a", "river"));
        let b = bb.tokenize(&DocumentRecord::new("b", "river"));
        let out = bb.embed(&store, &[a, b]).unwrap();
        assert_eq!(out[0].embeddings, out[1].embeddings);
        assert_eq!(out[0].source, EmbeddingSource::Toy);
    }

    #[test]
    fn same_word_differs_by_context() {
        let (store, bb) = toy(&small_config());
        let docs: Vec<_> = corpus()[..2].iter().map(|d| bb.tokenize(d)).collect();
        let out = bb.embed(&store, &docs).unwrap();
        let pos = |d: &ContextualEmbeddingDoc| d.words.iter().position(|w| w == "bank").unwrap();
        let a = out[0].embeddings.row(pos(&out[0]));
        let b = out[1].embeddings.row(pos(&out[1]));
        let dist: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn cached_mode_lookup_and_errors() {
        let emb = ContextualEmbeddingDoc::new(
            "x",
            vec!["hello".into(), "world".into()],
            Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]),
            EmbeddingSource::Cached,
        )
        .unwrap();
        let bb = Backbone::Cached(EmbeddingCache::new(2, vec![emb.clone()]).unwrap());
        let store = ParamStore::new();
        let hit = bb.tokenize(&DocumentRecord::new("x", "Hello world"));
        assert_eq!(bb.embed(&store, &[hit.clone()]).unwrap()[0], emb);
        let miss = bb.tokenize(&DocumentRecord::new("nope", "a"));
        assert!(matches!(bb.embed(&store, &[miss]), Err(CwtmError::CacheMiss(_))));
        assert!(matches!(bb.mlm_loss(&store, &[hit], 0), Err(CwtmError::UnsupportedMode { .. })));
    }

    #[test]
    fn untrained_mlm_is_near_uniform() {
        let config = BackboneConfig {
            mask_rate: 0.5,
            ..small_config()
        };
        let (store, bb) = toy(&config);
        let docs: Vec<_> = corpus().iter().map(|d| bb.tokenize(d)).collect();
        let loss = bb.mlm_loss(&store, &docs, 4).unwrap();
        let ln_v = (bb.vocab().unwrap().len() as f64).ln();
        assert!(loss.masked > 0);
        assert!((loss.value - ln_v).abs() < 0.15 * ln_v, "{} vs {}", loss.value, ln_v);
    }

    #[test]
    fn zero_mask_rate_warns() {
        let config = BackboneConfig {
            mask_rate: 0.0,
            ..small_config()
        };
        let (store, bb) = toy(&config);
        let docs: Vec<_> = corpus().iter().map(|d| bb.tokenize(d)).collect();
        let loss = bb.mlm_loss(&store, &docs, 4).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.nothing_masked);
    }

    #[test]
    fn masking_is_reproducible() {
        let (_, bb) = toy(&small_config());
        let docs: Vec<_> = corpus().iter().map(|d| bb.tokenize(d)).collect();
        let a = select_masks(&docs, 0.3, 40, 17);
        assert_eq!(a, select_masks(&docs, 0.3, 40, 17));
        assert_ne!(a, select_masks(&docs, 0.3, 40, 18));
    }

    #[test]
    fn prompt_tuning_leaves_base_untouched() {
        let config = BackboneConfig {
            mask_rate: 0.5,
            freeze_base: true,
            ..small_config()
        };
        let (mut store, bb) = toy(&config);
        let before = store.clone();
        let docs: Vec<_> = corpus().iter().map(|d| bb.tokenize(d)).collect();
        let mut g = Graph::new();
        let loss = bb.mlm_graph(&mut g, &store, &docs, 1).unwrap().loss.unwrap();
        let grads = g.backward(loss);
        Adam::new().step(&mut store, &grads, 1e-2);
        for (id, p) in store.iter() {
            let same = p.value().data().iter().zip(before.value(id).data()).all(|(a, b)| a.to_bits() == b.to_bits());
            match p.group {
                ParamGroup::BackboneBase => assert!(same, "{} changed", p.name),
                ParamGroup::Prompt => assert!(!same, "prompts did not move"),
                _ => {}
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = BackboneConfig {
            dim: 10,
            heads: 3,
            ..BackboneConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackboneConfig {
            mask_rate: 1.0,
            ..BackboneConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
