//! The CWTM network and its training objective.

mod checkpoint;
mod config;
pub mod network;
mod train;

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::backbone::{build_vocab, Backbone, BackboneConfig, BackboneMode, ContextualEmbeddingDoc, EmbeddingCache, TokenizedDoc, ToyBackbone};
use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};
use crate::geometry::{sample_dirichlet_flat, DirichletPrior, SimplexVector};
use crate::nn::ParamStore;
use crate::tensor::Matrix;

pub use checkpoint::{MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{derive_seed, LossToggles, TrainConfig, DEFAULT_NEGATIVE_CAP};
pub use network::TopicNetwork;
pub use train::{EpochRecord, TrainHistory};

/// Soft topic assignment of one word occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTopicVector {
    pub theta: SimplexVector,
    pub word: String,
    pub doc_id: String,
    pub position: usize,
}

/// Raw importance weights α and their per-document normalization β.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ImportanceWeights {
    /// `β_w = α_w / Σ α`. Every α must be positive and at most one.
    pub fn from_alpha(alpha: Vec<f64>) -> Result<Self> {
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(CwtmError::Shape(format!("importance weight {a} outside (0, 1]")));
        }
        let sum: f64 = alpha.iter().sum();
        let beta = alpha.iter().map(|a| a / sum).collect();
        Ok(ImportanceWeights { alpha, beta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTopicVector {
    pub theta_d: SimplexVector,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbedding {
    pub e_d: Vec<f64>,
    pub doc_id: String,
}

/// `θ_d = Σ β_w θ_w`.
pub fn pool_document(thetas: &[WordTopicVector], weights: &ImportanceWeights) -> Result<DocumentTopicVector> {
    if thetas.is_empty() {
        return Err(CwtmError::EmptyDocument(None));
    }
    if thetas.len() != weights.len() {
        return Err(CwtmError::Shape(format!("{} topic vectors for {} weights", thetas.len(), weights.len())));
    }
    let z = thetas[0].theta.dim();
    if thetas.iter().any(|t| t.theta.dim() != z) {
        return Err(CwtmError::Shape("word-topic vectors differ in dimension".into()));
    }
    let mut out = vec![0.0; z];
    for (t, b) in thetas.iter().zip(&weights.beta) {
        for (o, v) in out.iter_mut().zip(t.theta.as_slice()) {
            *o += b * v;
        }
    }
    Ok(DocumentTopicVector {
        theta_d: SimplexVector::new(out)?,
        doc_id: thetas[0].doc_id.clone(),
    })
}

/// The five objective terms of one batch. Disabled terms are exactly 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub mi: f64,
    pub mlm: f64,
    pub rec: f64,
    pub mmd_theta: f64,
    pub mmd_phi: f64,
}

impl LossBreakdown {
    pub const NAMES: [&'static str; 5] = ["mi", "mlm", "rec", "mmd_theta", "mmd_phi"];

    pub fn terms(&self) -> [f64; 5] {
        [self.mi, self.mlm, self.rec, self.mmd_theta, self.mmd_phi]
    }

    pub fn total(&self) -> f64 {
        self.terms().iter().sum()
    }

    fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.mi += s * other.mi;
        self.mlm += s * other.mlm;
        self.rec += s * other.rec;
        self.mmd_theta += s * other.mmd_theta;
        self.mmd_phi += s * other.mmd_phi;
    }
}

/// A batch objective recorded on a graph.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub total: Var,
    pub terms: LossBreakdown,
    /// The MLM term was enabled but could not contribute (cached mode or no
    /// masked position).
    pub mlm_skipped: bool,
    /// The φ term was enabled but the batch had fewer than two distinct words.
    pub phi_skipped: bool,
}

/// Graph nodes of one document's forward pass.
#[derive(Debug, Clone)]
pub struct DocForward {
    pub embeddings: Var,
    pub words: Vec<String>,
    pub theta_w: Var,
    pub alpha: Var,
    pub theta_d: Var,
    pub e_d: Option<Var>,
}

/// Per-document inference output.
#[derive(Debug, Clone)]
pub struct Inference {
    pub document: DocumentTopicVector,
    pub words: Vec<WordTopicVector>,
    pub weights: ImportanceWeights,
    /// The word embeddings the vectors were computed from.
    pub embeddings: Matrix,
}

#[derive(Debug, Clone)]
pub struct CwtmModel {
    store: ParamStore,
    backbone: Backbone,
    backbone_config: BackboneConfig,
    config: TrainConfig,
    net: TopicNetwork,
}

const INIT_STREAM: u64 = 1;

impl CwtmModel {
    /// Fresh model. Toy mode builds the vocabulary from `corpus`; cached mode
    /// takes its embeddings (and width) from `cache`.
    pub fn new(
        config: TrainConfig,
        mut backbone_config: BackboneConfig,
        corpus: &[DocumentRecord],
        cache: Option<EmbeddingCache>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, INIT_STREAM));
        let mut store = ParamStore::new();
        let backbone = match backbone_config.mode {
            BackboneMode::Toy => {
                backbone_config.validate()?;
                let vocab = build_vocab(corpus, backbone_config.vocab_size)?;
                Backbone::Toy(ToyBackbone::new(&mut store, &backbone_config, vocab, &mut rng)?)
            }
            BackboneMode::Cached => {
                let cache = cache.ok_or_else(|| CwtmError::Config("cached mode needs an embedding cache".into()))?;
                backbone_config.dim = cache.dim();
                backbone_config.validate()?;
                Backbone::Cached(cache)
            }
        };
        let dim = backbone_config.dim;
        check_heads(dim, backbone_config.heads)?;
        let net = TopicNetwork::new(
            &mut store,
            dim,
            backbone_config.heads,
            config.num_topics,
            config.hidden,
            config.importance_enabled,
            &mut rng,
        );
        Ok(CwtmModel {
            store,
            backbone,
            backbone_config,
            config,
            net,
        })
    }

    /// Reassembles a model from loaded parameters.
    pub fn from_parts(store: ParamStore, backbone: Backbone, backbone_config: BackboneConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if backbone.dim() != backbone_config.dim {
            return Err(CwtmError::Checkpoint(format!(
                "backbone width {} does not match configured dim {}",
                backbone.dim(),
                backbone_config.dim
            )));
        }
        let net = TopicNetwork::bind(&store, backbone_config.heads, config.importance_enabled)?;
        if net.topics() != config.num_topics || net.dim() != backbone_config.dim {
            return Err(CwtmError::Checkpoint("topic network shape does not match the configuration".into()));
        }
        Ok(CwtmModel {
            store,
            backbone,
            backbone_config,
            config,
            net,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        &self.backbone_config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn network(&self) -> &TopicNetwork {
        &self.net
    }

    pub fn num_topics(&self) -> usize {
        self.config.num_topics
    }

    pub fn tokenize(&self, doc: &DocumentRecord) -> TokenizedDoc {
        self.backbone.tokenize(doc)
    }

    /// Records the full forward pass of one document on `g`.
    pub fn forward_doc(&self, g: &mut Graph, doc: &TokenizedDoc, with_doc_embedding: bool) -> Result<DocForward> {
        let emb = self.backbone.embed_graph(g, &self.store, doc)?;
        if emb.words.is_empty() {
            return Err(CwtmError::EmptyDocument(Some(doc.doc_id.clone())));
        }
        self.forward_rows(g, emb.rows, emb.words, with_doc_embedding)
    }

    fn forward_rows(&self, g: &mut Graph, e: Var, words: Vec<String>, with_doc_embedding: bool) -> Result<DocForward> {
        if g.value(e).cols() != self.net.dim() {
            return Err(CwtmError::Shape(format!(
                "embeddings have width {}, model expects {}",
                g.value(e).cols(),
                self.net.dim()
            )));
        }
        let theta_w = self.net.encode(g, &self.store, e);
        let alpha = self.net.importance(g, &self.store, e);
        let theta_d = network::pool(g, theta_w, alpha);
        let e_d = with_doc_embedding.then(|| self.net.doc_embedding(g, &self.store, e));
        Ok(DocForward {
            embeddings: e,
            words,
            theta_w,
            alpha,
            theta_d,
            e_d,
        })
    }

    fn collect(&self, g: &Graph, f: &DocForward, doc_id: &str) -> Result<Inference> {
        let theta_w = g.value(f.theta_w);
        let words = f
            .words
            .iter()
            .enumerate()
            .map(|(position, w)| WordTopicVector {
                theta: SimplexVector::new_unchecked(theta_w.row(position).to_vec()),
                word: w.clone(),
                doc_id: doc_id.to_string(),
                position,
            })
            .collect();
        let weights = ImportanceWeights::from_alpha(g.value(f.alpha).data().to_vec())?;
        let theta_d = g.value(f.theta_d).data().to_vec();
        if theta_d.iter().any(|v| !v.is_finite()) {
            return Err(CwtmError::Numeric(format!("non-finite topic vector for '{doc_id}'")));
        }
        Ok(Inference {
            document: DocumentTopicVector {
                theta_d: SimplexVector::new(theta_d)?,
                doc_id: doc_id.to_string(),
            },
            words,
            weights,
            embeddings: g.value(f.embeddings).clone(),
        })
    }

    /// Forward pass for a raw document; parameters are not touched.
    pub fn infer_document(&self, doc: &DocumentRecord) -> Result<Inference> {
        self.infer_tokenized(&self.tokenize(doc))
    }

    pub fn infer_tokenized(&self, doc: &TokenizedDoc) -> Result<Inference> {
        let mut g = Graph::new();
        let f = self.forward_doc(&mut g, doc, false)?;
        self.collect(&g, &f, &doc.doc_id)
    }

    /// Forward pass from precomputed word embeddings of either source.
    pub fn infer_embeddings(&self, emb: &ContextualEmbeddingDoc) -> Result<Inference> {
        if emb.is_empty() {
            return Err(CwtmError::EmptyDocument(Some(emb.doc_id.clone())));
        }
        let mut g = Graph::new();
        let e = g.constant(emb.embeddings.clone());
        let f = self.forward_rows(&mut g, e, emb.words.clone(), false)?;
        self.collect(&g, &f, &emb.doc_id)
    }

    pub fn encode_word_topics(&self, emb: &ContextualEmbeddingDoc) -> Result<Vec<WordTopicVector>> {
        if emb.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.infer_embeddings(emb)?.words)
    }

    pub fn importance(&self, emb: &ContextualEmbeddingDoc) -> Result<ImportanceWeights> {
        if emb.is_empty() {
            return Ok(ImportanceWeights { alpha: Vec::new(), beta: Vec::new() });
        }
        Ok(self.infer_embeddings(emb)?.weights)
    }

    pub fn doc_embedding(&self, emb: &ContextualEmbeddingDoc) -> Result<DocumentEmbedding> {
        if emb.is_empty() {
            return Err(CwtmError::EmptyDocument(Some(emb.doc_id.clone())));
        }
        let mut g = Graph::new();
        let e = g.constant(emb.embeddings.clone());
        let d = self.net.doc_embedding(&mut g, &self.store, e);
        Ok(DocumentEmbedding {
            e_d: g.value(d).data().to_vec(),
            doc_id: emb.doc_id.clone(),
        })
    }

    /// Records the joint objective of a batch on `g`. `seed` drives negative
    /// sampling, MLM masking and the prior draws.
    pub fn batch_objective(&self, g: &mut Graph, docs: &[TokenizedDoc], seed: u64) -> Result<BatchObjective> {
        let toggles = self.config.loss_toggles;
        let m = docs.len();
        if m < 2 {
            return Err(CwtmError::InvalidBatch(format!("need at least 2 documents, got {m}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let need_e_d = toggles.mi || toggles.rec;
        let forwards = docs
            .iter()
            .map(|d| self.forward_doc(g, d, need_e_d))
            .collect::<Result<Vec<_>>>()?;
        let mut total: Option<Var> = None;
        let mut terms = LossBreakdown::default();
        let mut push = |g: &mut Graph, v: Var| -> f64 {
            total = Some(match total {
                Some(t) => g.add(t, v),
                None => v,
            });
            g.scalar(v)
        };

        let theta_d = {
            let parts: Vec<Var> = forwards.iter().map(|f| f.theta_d).collect();
            g.concat_rows(&parts)
        };

        if toggles.mi {
            let all: Vec<Var> = forwards.iter().map(|f| f.embeddings).collect();
            let all = g.concat_rows(&all);
            let mut owner = Vec::new();
            for (i, f) in forwards.iter().enumerate() {
                owner.extend(std::iter::repeat_n(i, f.words.len()));
            }
            let mut per_doc = Vec::with_capacity(m);
            for (i, f) in forwards.iter().enumerate() {
                let pool: Vec<usize> = (0..owner.len()).filter(|&r| owner[r] != i).collect();
                let count = self.config.negatives_for(f.words.len());
                let picks: Vec<usize> = (0..count).map(|_| *pool.choose(&mut rng).expect("other documents have words")).collect();
                let negatives = g.gather_rows(all, &picks);
                per_doc.push(network::mi_doc_loss(g, f.e_d.expect("doc embedding requested"), f.embeddings, negatives));
            }
            let stacked = g.concat_rows(&per_doc);
            let mi = g.mean_all(stacked);
            terms.mi = push(g, mi);
        }

        let mut mlm_skipped = false;
        if toggles.mlm {
            let mask_seed = derive_seed(seed, 1);
            match self.backbone.mode() {
                BackboneMode::Toy => match self.backbone.mlm_graph(g, &self.store, docs, mask_seed)?.loss {
                    Some(l) => terms.mlm = push(g, l),
                    None => {
                        log::warn!("MLM batch has no masked positions; term contributes 0");
                        mlm_skipped = true;
                    }
                },
                BackboneMode::Cached => mlm_skipped = true,
            }
        }

        if toggles.rec {
            let e_d: Vec<Var> = forwards.iter().map(|f| f.e_d.expect("doc embedding requested")).collect();
            let e_d = g.concat_rows(&e_d);
            let target = Arc::new(g.value(e_d).clone());
            let decoded = self.net.decode(g, &self.store, theta_d);
            let rec = network::rec_loss(g, decoded, target)?;
            terms.rec = push(g, rec);
        }

        if toggles.mmd_theta {
            let prior = DirichletPrior::new(self.config.dirichlet_alpha, self.config.num_topics)?;
            let p = sample_dirichlet_flat(&prior, m, &mut rng);
            let p = Arc::new(Matrix::from_vec(m, self.config.num_topics, p));
            let mmd = g.mmd_idk(theta_d, p)?;
            terms.mmd_theta = push(g, mmd);
        }

        let mut phi_skipped = false;
        if toggles.mmd_phi {
            let theta_w: Vec<Var> = forwards.iter().map(|f| f.theta_w).collect();
            let theta_w = g.concat_rows(&theta_w);
            let alpha: Vec<Var> = forwards.iter().map(|f| f.alpha).collect();
            let alpha = g.concat_rows(&alpha);
            let words: Vec<String> = forwards.iter().flat_map(|f| f.words.iter().cloned()).collect();
            match network::batch_phi(g, theta_w, alpha, &words) {
                Some((phi, vocab)) => {
                    let z = self.config.num_topics;
                    let prior = DirichletPrior::new(self.config.dirichlet_alpha, vocab.len())?;
                    let p = sample_dirichlet_flat(&prior, z, &mut rng);
                    let mmd = g.mmd_idk(phi, Arc::new(Matrix::from_vec(z, vocab.len(), p)))?;
                    terms.mmd_phi = push(g, mmd);
                }
                None => {
                    log::warn!("batch has fewer than two distinct words; topic-word term contributes 0");
                    phi_skipped = true;
                }
            }
        }

        let total = match total {
            Some(t) => t,
            None => g.constant(Matrix::zeros(1, 1)),
        };
        if !g.scalar(total).is_finite() {
            return Err(CwtmError::Numeric(format!("batch loss is {}", g.scalar(total))));
        }
        Ok(BatchObjective {
            total,
            terms,
            mlm_skipped,
            phi_skipped,
        })
    }

    /// Evaluates the joint objective without updating anything.
    pub fn total_loss(&self, docs: &[TokenizedDoc], seed: u64) -> Result<(f64, LossBreakdown)> {
        let mut g = Graph::new();
        let obj = self.batch_objective(&mut g, docs, seed)?;
        Ok((g.scalar(obj.total), obj.terms))
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(CwtmError::Config(format!("embedding width {dim} is not divisible by {heads} heads")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    pub(crate) fn corpus(n: usize) -> Vec<DocumentRecord> {
        let groups = [
            ["apple", "pear", "plum", "fig", "kiwi"],
            ["red", "blue", "green", "teal", "gray"],
        ];
        (0..n)
            .map(|i| {
                let g = &groups[i % 2];
                let text: Vec<&str> = (0..8).map(|j| g[(i + j * 3) % 5]).collect();
                DocumentRecord::new(format!("d{i}"), text.join(" "))
            })
            .collect()
    }

    pub(crate) fn small(config: TrainConfig) -> (CwtmModel, Vec<DocumentRecord>) {
        let docs = corpus(12);
        let bb = BackboneConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            prompt_len: 2,
            ..BackboneConfig::default()
        };
        let config = TrainConfig {
            num_topics: 3,
            batch_size: 4,
            hidden: 16,
            ..config
        };
        (CwtmModel::new(config, bb, &docs, None).unwrap(), docs)
    }

    fn batch(model: &CwtmModel, docs: &[DocumentRecord]) -> Vec<TokenizedDoc> {
        docs[..4].iter().map(|d| model.tokenize(d)).collect()
    }

    #[test]
    fn importance_normalization() {
        let w = ImportanceWeights::from_alpha(vec![0.6, 0.2]).unwrap();
        assert!((w.beta[0] - 0.75).abs() < 1e-12 && (w.beta[1] - 0.25).abs() < 1e-12);
        assert!(ImportanceWeights::from_alpha(vec![0.0]).is_err());
    }

    #[test]
    fn pool_document_cases() {
        let wt = |v: Vec<f64>| WordTopicVector {
            theta: SimplexVector::new(v).unwrap(),
            word: "w".into(),
            doc_id: "d".into(),
            position: 0,
        };
        let w = ImportanceWeights::from_alpha(vec![0.6, 0.2]).unwrap();
        let d = pool_document(&[wt(vec![1.0, 0.0]), wt(vec![0.0, 1.0])], &w).unwrap();
        assert!((d.theta_d.as_slice()[0] - 0.75).abs() < 1e-12);
        let one = ImportanceWeights::from_alpha(vec![0.3]).unwrap();
        let d = pool_document(&[wt(vec![0.2, 0.8])], &one).unwrap();
        assert_eq!(d.theta_d.as_slice(), &[0.2, 0.8]);
        let eq = ImportanceWeights::from_alpha(vec![0.5; 3]).unwrap();
        let t = vec![0.1, 0.3, 0.6];
        let d = pool_document(&[wt(t.clone()), wt(t.clone()), wt(t.clone())], &eq).unwrap();
        assert!(d.theta_d.as_slice().iter().zip(&t).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(pool_document(&[], &ImportanceWeights::from_alpha(vec![]).unwrap()).is_err());
    }

    #[test]
    fn toggles_zero_and_add_up() {
        let (model, docs) = small(TrainConfig::default());
        let b = batch(&model, &docs);
        let (total, terms) = model.total_loss(&b, 5).unwrap();
        assert!((total - terms.total()).abs() < 1e-6);
        assert!(terms.terms().iter().all(|t| *t > 0.0 || *t < 0.0));

        let mut off = model.clone();
        off.config.loss_toggles = LossToggles::all(false);
        assert_eq!(off.total_loss(&b, 5).unwrap(), (0.0, LossBreakdown::default()));

        for (i, name) in LossBreakdown::NAMES.iter().enumerate() {
            let mut one = model.clone();
            let mut t = LossToggles::all(false);
            match *name {
                "mi" => t.mi = true,
                "mlm" => t.mlm = true,
                "rec" => t.rec = true,
                "mmd_theta" => t.mmd_theta = true,
                _ => t.mmd_phi = true,
            }
            one.config.loss_toggles = t;
            let (total, terms) = one.total_loss(&b, 5).unwrap();
            let values = terms.terms();
            assert_eq!(total, values[i], "{name}");
            assert!(values.iter().enumerate().all(|(j, v)| j == i || *v == 0.0));
        }
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let (model, docs) = small(TrainConfig::default());
        let b = vec![model.tokenize(&docs[0])];
        assert!(model.total_loss(&b, 0).is_err());
    }

    #[test]
    fn inference_invariants_and_oov() {
        let (model, docs) = small(TrainConfig::default());
        let inf = model.infer_document(&docs[0]).unwrap();
        assert_eq!(inf.words.len(), 8);
        assert!((inf.weights.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for z in 0..3 {
            let lo = inf.words.iter().map(|w| w.theta.as_slice()[z]).fold(f64::INFINITY, f64::min);
            let hi = inf.words.iter().map(|w| w.theta.as_slice()[z]).fold(f64::NEG_INFINITY, f64::max);
            let v = inf.document.theta_d.as_slice()[z];
            assert!(lo - 1e-12 <= v && v <= hi + 1e-12);
        }
        let oov = model.infer_document(&DocumentRecord::new("x", "quux zork apple")).unwrap();
        crate::geometry::check_simplex(oov.document.theta_d.as_slice()).unwrap();
        assert!(matches!(
            model.infer_document(&DocumentRecord::new("e", "...")),
            Err(CwtmError::EmptyDocument(_))
        ));
    }

    #[test]
    fn repeated_word_in_cached_rows_pools_to_itself() {
        let (model, _) = small(TrainConfig::default());
        let row = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.9, -1.0, 0.4];
        let m = Matrix::from_rows(&[row.clone(), row.clone(), row]);
        let emb = ContextualEmbeddingDoc::new("c", vec!["w".into(); 3], m, crate::backbone::EmbeddingSource::Cached).unwrap();
        let inf = model.infer_embeddings(&emb).unwrap();
        let want = inf.words[0].theta.as_slice();
        // The importance layer attends over identical rows, so every α and θ_w agree.
        for (a, b) in inf.document.theta_d.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn doc_head_gradient_needs_mi() {
        let (model, docs) = small(TrainConfig::default());
        let b = batch(&model, &docs);
        let touched = |toggles: LossToggles| {
            let mut m = model.clone();
            m.config.loss_toggles = toggles;
            let mut g = Graph::new();
            let obj = m.batch_objective(&mut g, &b, 1).unwrap();
            let grads = g.backward(obj.total);
            grads
                .params()
                .filter(|(_, gm)| gm.data().iter().any(|v| *v != 0.0))
                .map(|(id, _)| m.store.get(id).group)
                .collect::<std::collections::BTreeSet<_>>()
        };
        let all = touched(LossToggles::default());
        for group in [
            ParamGroup::Encoder,
            ParamGroup::Importance,
            ParamGroup::DocHead,
            ParamGroup::Decoder,
            ParamGroup::Prompt,
            ParamGroup::MlmHead,
        ] {
            assert!(all.contains(&group), "{group}");
        }
        assert!(!all.contains(&ParamGroup::BackboneBase));
        let no_mi = touched(LossToggles { mi: false, ..LossToggles::default() });
        assert!(!no_mi.contains(&ParamGroup::DocHead));
    }
}
