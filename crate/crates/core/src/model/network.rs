//! The topic network on top of the word embeddings: word-topic encoder,
//! importance network, document-embedding head and decoder.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{CwtmError, Result};
use crate::nn::{sinusoidal_positions, Linear, ParamGroup, ParamId, ParamStore, TransformerLayer};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct TopicNetwork {
    dim: usize,
    topics: usize,
    enc_hidden: Linear,
    enc_out: Linear,
    imp_layer: TransformerLayer,
    imp_out: Linear,
    doc_cls: ParamId,
    doc_layer: TransformerLayer,
    dec_hidden: Linear,
    dec_out: Linear,
    importance_enabled: bool,
}

impl TopicNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        topics: usize,
        hidden: usize,
        importance_enabled: bool,
        rng: &mut R,
    ) -> Self {
        use ParamGroup::*;
        TopicNetwork {
            dim,
            topics,
            enc_hidden: Linear::new(store, "encoder.hidden", Encoder, dim, hidden, rng),
            enc_out: Linear::new(store, "encoder.out", Encoder, hidden, topics, rng),
            imp_layer: TransformerLayer::new(store, "importance.layer", Importance, dim, heads, rng),
            imp_out: Linear::new(store, "importance.out", Importance, dim, 1, rng),
            doc_cls: store.add("doc_head.cls", DocHead, Matrix::randn(1, dim, 1.0, rng)),
            doc_layer: TransformerLayer::new(store, "doc_head.layer", DocHead, dim, heads, rng),
            dec_hidden: Linear::new(store, "decoder.hidden", Decoder, topics, hidden, rng),
            dec_out: Linear::new(store, "decoder.out", Decoder, hidden, dim, rng),
            importance_enabled,
        }
    }

    pub fn bind(store: &ParamStore, heads: usize, importance_enabled: bool) -> Result<Self> {
        let missing = |what: &str| CwtmError::Checkpoint(format!("missing topic-network tensor '{what}'"));
        let linear = |name: &str| Linear::bind(store, name).ok_or_else(|| missing(name));
        let layer = |name: &str| TransformerLayer::bind(store, name, heads).ok_or_else(|| missing(name));
        let cls = store.find("doc_head.cls").ok_or_else(|| missing("doc_head.cls"))?;
        let enc_out = store.find("encoder.out.bias").ok_or_else(|| missing("encoder.out"))?;
        Ok(TopicNetwork {
            dim: store.value(cls).cols(),
            topics: store.value(enc_out).cols(),
            enc_hidden: linear("encoder.hidden")?,
            enc_out: linear("encoder.out")?,
            imp_layer: layer("importance.layer")?,
            imp_out: linear("importance.out")?,
            doc_cls: cls,
            doc_layer: layer("doc_head.layer")?,
            dec_hidden: linear("decoder.hidden")?,
            dec_out: linear("decoder.out")?,
            importance_enabled,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn importance_enabled(&self) -> bool {
        self.importance_enabled
    }

    /// `n × dim` embeddings to `n × Z` word-topic vectors.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Var {
        let h = self.enc_hidden.forward(g, store, e);
        let h = g.gelu(h);
        let logits = self.enc_out.forward(g, store, h);
        g.softmax_rows(logits)
    }

    /// `n × 1` importance weights α, or a constant column of ones when the
    /// importance network is disabled.
    pub fn importance(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Var {
        if !self.importance_enabled {
            let n = g.value(e).rows();
            return g.constant(Matrix::filled(n, 1, 1.0));
        }
        let h = self.imp_layer.forward(g, store, e);
        let logit = self.imp_out.forward(g, store, h);
        g.sigmoid(logit)
    }

    /// Document embedding: the learned CLS slot after one transformer layer
    /// over `[CLS] + words`, `1 × dim`.
    pub fn doc_embedding(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Var {
        let n = g.value(e).rows();
        let cls = g.param(store, self.doc_cls);
        let x = g.concat_rows(&[cls, e]);
        let pos = g.constant(sinusoidal_positions(n + 1, self.dim));
        let x = g.add(x, pos);
        let h = self.doc_layer.forward(g, store, x);
        g.slice_rows(h, 0, 1)
    }

    /// `m × Z` document-topic vectors to `m × dim` reconstructions.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, theta: Var) -> Var {
        let h = self.dec_hidden.forward(g, store, theta);
        let h = g.gelu(h);
        self.dec_out.forward(g, store, h)
    }
}

/// `θ_d = Σ_w β_w θ_w` with `β = α / Σα`; `theta_w` is `n × Z`, `alpha` is
/// `n × 1` and the result `1 × Z`.
pub fn pool(g: &mut Graph, theta_w: Var, alpha: Var) -> Var {
    let alpha_row = g.transpose(alpha);
    let beta = g.normalize_rows(alpha_row);
    g.matmul(beta, theta_w)
}

/// Contrastive MI loss of one document: `softplus(-e_w·e_d)` averaged over
/// the document's own words plus `softplus(e_w̄·e_d)` averaged over the
/// negative words. `softplus(-x) = -ln σ(x)`.
pub fn mi_doc_loss(g: &mut Graph, e_d: Var, own: Var, negatives: Var) -> Var {
    let pos = g.matmul_t(own, e_d);
    let pos = g.scale(pos, -1.0);
    let pos = g.softplus(pos);
    let pos = g.mean_all(pos);
    let neg = g.matmul_t(negatives, e_d);
    let neg = g.softplus(neg);
    let neg = g.mean_all(neg);
    g.add(pos, neg)
}

/// Mean squared error of the decoded vectors against a constant target.
pub fn rec_loss(g: &mut Graph, decoded: Var, target: Arc<Matrix>) -> Result<Var> {
    if g.value(decoded).shape() != target.shape() {
        return Err(CwtmError::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            g.value(decoded).shape(),
            target.shape()
        )));
    }
    Ok(g.mse(decoded, target))
}

/// Distinct words in sorted order and, for each occurrence, the index of its
/// word.
pub fn word_segments(words: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut index: BTreeMap<&str, usize> = words.iter().map(|w| (w.as_str(), 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let seg = words.iter().map(|w| index[w.as_str()]).collect();
    (index.into_keys().map(str::to_string).collect(), seg)
}

/// Batch topic-word vectors: `M[z][v] = Σ_{occurrences of v} α θ[z]`, each
/// row normalized over the batch vocabulary. Returns `Z × |V_b|` and the
/// vocabulary, or `None` when fewer than two distinct words occur.
pub fn batch_phi(g: &mut Graph, theta_w: Var, alpha: Var, words: &[String]) -> Option<(Var, Vec<String>)> {
    let (vocab, seg) = word_segments(words);
    if vocab.len() < 2 {
        return None;
    }
    let weighted = g.mul_col(theta_w, alpha);
    let summed = g.segment_sum(weighted, &seg, vocab.len());
    let by_topic = g.transpose(summed);
    Some((g.normalize_rows(by_topic), vocab))
}
