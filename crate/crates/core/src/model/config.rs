use serde::{Deserialize, Serialize};

use crate::error::{CwtmError, Result};

/// Independent switches for the five objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossToggles {
    pub mi: bool,
    pub mlm: bool,
    pub rec: bool,
    pub mmd_theta: bool,
    pub mmd_phi: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles::all(true)
    }
}

impl LossToggles {
    pub fn all(on: bool) -> Self {
        LossToggles {
            mi: on,
            mlm: on,
            rec: on,
            mmd_theta: on,
            mmd_phi: on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_topics: usize,
    pub dirichlet_alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub loss_toggles: LossToggles,
    pub importance_enabled: bool,
    /// Negative words per document for the MI term; `None` means the
    /// document's own word count, capped at [`DEFAULT_NEGATIVE_CAP`].
    pub negatives_per_doc: Option<usize>,
    pub seed: u64,
    /// How many documents the per-epoch distribution-match diagnostic uses.
    pub diagnostic_docs: usize,
    /// Hidden width of the encoder and decoder MLPs.
    pub hidden: usize,
}

pub const DEFAULT_NEGATIVE_CAP: usize = 64;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_topics: 20,
            dirichlet_alpha: 0.1,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs: 20,
            loss_toggles: LossToggles::default(),
            importance_enabled: true,
            negatives_per_doc: None,
            seed: 0,
            diagnostic_docs: 256,
            hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CwtmError::Config(msg));
        if self.num_topics < 2 {
            return bad(format!("num_topics must be at least 2, got {}", self.num_topics));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return bad(format!("dirichlet_alpha must be positive, got {}", self.dirichlet_alpha));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} must be in [0, 1)", self.warmup_fraction));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.negatives_per_doc == Some(0) {
            return bad("negatives_per_doc must be positive".into());
        }
        if self.diagnostic_docs < 2 {
            return bad("diagnostic_docs must be at least 2".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        Ok(())
    }

    pub fn negatives_for(&self, words: usize) -> usize {
        self.negatives_per_doc.unwrap_or(words.clamp(1, DEFAULT_NEGATIVE_CAP))
    }
}

/// Independent stream seed derived from a run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
