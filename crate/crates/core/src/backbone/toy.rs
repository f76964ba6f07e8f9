//! Small trainable transformer encoder with soft prompts and an MLM head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{CwtmError, Result};
use crate::nn::{sinusoidal_positions, LayerNorm, Linear, ParamGroup, ParamId, ParamStore, TransformerLayer};
use crate::tensor::Matrix;

use super::vocab::{TokenizedDoc, Vocab, MASK_ID, SPECIALS};
use super::BackboneConfig;

/// One masked position: where, which id was fed in, and the id to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedPosition {
    pub position: usize,
    pub input_id: usize,
    pub target_id: usize,
}

/// Chooses MLM positions: each word is selected with probability
/// `mask_rate`; a selected word becomes `[MASK]` 80% of the time, a random
/// ordinary word 10% of the time and stays unchanged otherwise.
pub fn select_masks(docs: &[TokenizedDoc], mask_rate: f64, vocab_len: usize, seed: u64) -> Vec<Vec<MaskedPosition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first_word = SPECIALS.len();
    docs.iter()
        .map(|doc| {
            let mut out = Vec::new();
            for (position, &target_id) in doc.token_ids.iter().enumerate() {
                let pick: f64 = rng.random();
                let action: f64 = rng.random();
                if pick >= mask_rate {
                    continue;
                }
                let input_id = if action < 0.8 || vocab_len <= first_word {
                    MASK_ID
                } else if action < 0.9 {
                    rng.random_range(first_word..vocab_len)
                } else {
                    target_id
                };
                out.push(MaskedPosition {
                    position,
                    input_id,
                    target_id,
                });
            }
            out
        })
        .collect()
}

/// Result of an MLM pass. `loss` is `None` when nothing was masked.
#[derive(Debug, Clone, Copy)]
pub struct MlmPass {
    pub loss: Option<Var>,
    pub masked: usize,
}

#[derive(Debug, Clone)]
pub struct ToyBackbone {
    vocab: Vocab,
    dim: usize,
    tok_emb: ParamId,
    cls: ParamId,
    prompts: Option<ParamId>,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
    mlm_head: Linear,
    prompt_len: usize,
    mask_rate: f64,
}

impl ToyBackbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &BackboneConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let base = ParamGroup::BackboneBase;
        let tok_emb = store.add("backbone.tok_emb", base, Matrix::randn(vocab.len(), dim, 1.0, rng));
        let cls = store.add("backbone.cls", base, Matrix::randn(1, dim, 1.0, rng));
        let prompts = (config.prompt_len > 0).then(|| {
            store.add(
                "backbone.prompts",
                ParamGroup::Prompt,
                Matrix::randn(config.prompt_len, dim, 1.0, rng),
            )
        });
        let layers = (0..config.layers)
            .map(|i| TransformerLayer::new(store, &format!("backbone.layer{i}"), base, dim, config.heads, rng))
            .collect();
        let final_ln = LayerNorm::new(store, "backbone.final_ln", base, dim);
        let mlm_head = Linear::new(store, "backbone.mlm_head", ParamGroup::MlmHead, dim, vocab.len(), rng);
        // Near-uniform predictions before training.
        let head_w = store.find("backbone.mlm_head.weight").expect("just added");
        store.value_mut(head_w).data_mut().iter_mut().for_each(|w| *w *= 0.02);
        store.set_frozen(base, config.freeze_base);
        Ok(ToyBackbone {
            vocab,
            dim,
            tok_emb,
            cls,
            prompts,
            layers,
            final_ln,
            mlm_head,
            prompt_len: config.prompt_len,
            mask_rate: config.mask_rate,
        })
    }

    /// Re-attaches to parameters loaded from a checkpoint.
    pub fn bind(store: &ParamStore, config: &BackboneConfig, vocab: Vocab) -> Result<Self> {
        let missing = |what: &str| CwtmError::Checkpoint(format!("missing backbone tensor '{what}'"));
        let tok_emb = store.find("backbone.tok_emb").ok_or_else(|| missing("tok_emb"))?;
        if store.value(tok_emb).shape() != (vocab.len(), config.dim) {
            return Err(CwtmError::Checkpoint("token embedding shape does not match vocabulary".into()));
        }
        let prompts = if config.prompt_len > 0 {
            Some(store.find("backbone.prompts").ok_or_else(|| missing("prompts"))?)
        } else {
            None
        };
        let layers = (0..config.layers)
            .map(|i| TransformerLayer::bind(store, &format!("backbone.layer{i}"), config.heads).ok_or_else(|| missing("layer")))
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyBackbone {
            vocab,
            dim: config.dim,
            tok_emb,
            cls: store.find("backbone.cls").ok_or_else(|| missing("cls"))?,
            prompts,
            layers,
            final_ln: LayerNorm::bind(store, "backbone.final_ln").ok_or_else(|| missing("final_ln"))?,
            mlm_head: Linear::bind(store, "backbone.mlm_head").ok_or_else(|| missing("mlm_head"))?,
            prompt_len: config.prompt_len,
            mask_rate: config.mask_rate,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prompts(&self) -> Option<ParamId> {
        self.prompts
    }

    /// Runs `[prompts] + [CLS] + tokens` through the encoder and returns the
    /// rows of the word positions only.
    pub fn forward_words(&self, g: &mut Graph, store: &ParamStore, token_ids: &[usize]) -> Var {
        let table = g.param(store, self.tok_emb);
        let tokens = g.gather_rows(table, token_ids);
        let cls = g.param(store, self.cls);
        let mut parts = Vec::with_capacity(3);
        if let Some(p) = self.prompts {
            parts.push(g.param(store, p));
        }
        parts.push(cls);
        parts.push(tokens);
        let x = g.concat_rows(&parts);
        let offset = self.prompt_len + 1;
        let pos = g.constant(sinusoidal_positions(offset + token_ids.len(), self.dim));
        let mut h = g.add(x, pos);
        for layer in &self.layers {
            h = layer.forward(g, store, h);
        }
        let h = self.final_ln.forward(g, store, h);
        g.slice_rows(h, offset, token_ids.len())
    }

    /// Mean cross-entropy of the vocabulary head over masked positions.
    pub fn mlm_pass(&self, g: &mut Graph, store: &ParamStore, docs: &[TokenizedDoc], seed: u64) -> MlmPass {
        let masks = select_masks(docs, self.mask_rate, self.vocab.len(), seed);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (doc, masked) in docs.iter().zip(&masks) {
            if masked.is_empty() {
                continue;
            }
            let mut ids = doc.token_ids.clone();
            for m in masked {
                ids[m.position] = m.input_id;
            }
            let hidden = self.forward_words(g, store, &ids);
            let positions: Vec<usize> = masked.iter().map(|m| m.position).collect();
            rows.push(g.gather_rows(hidden, &positions));
            targets.extend(masked.iter().map(|m| m.target_id));
        }
        if targets.is_empty() {
            return MlmPass { loss: None, masked: 0 };
        }
        let stacked = g.concat_rows(&rows);
        let logits = self.mlm_head.forward(g, store, stacked);
        MlmPass {
            loss: Some(g.softmax_xent(logits, &targets)),
            masked: targets.len(),
        }
    }
}
