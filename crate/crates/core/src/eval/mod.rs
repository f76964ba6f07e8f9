//! Evaluation: coherence, diversity, classification probe, OOV split and
//! planted-topic corpora.

pub mod coherence;
pub mod diversity;
pub mod oov;
pub mod planted;
pub mod probe;

use serde::Serialize;

pub use coherence::{coherence_cv, npmi, Coherence, ReferenceIndex, DEFAULT_WINDOW};
pub use diversity::{diversity, Diversity};
pub use oov::{observed_ratio, oov_split, OovSplit, SetStats};
pub use planted::{make_planted_corpus, PlantedConfig, PlantedCorpus};
pub use probe::{classify_probe, ProbeReport, DEFAULT_FOLDS};

/// `{metric, value, config, breakdown}` as written by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub config: serde_json::Value,
    pub breakdown: serde_json::Value,
}
