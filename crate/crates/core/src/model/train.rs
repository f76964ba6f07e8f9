use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::Graph;
use crate::backbone::TokenizedDoc;
use crate::corpus::DocumentRecord;
use crate::error::{CwtmError, Result};
use crate::geometry::{mmd_idk_flat, sample_dirichlet_flat, DirichletPrior};
use crate::nn::{Adam, WarmupLinear};

use super::{derive_seed, CwtmModel, LossBreakdown};

const SHUFFLE_STREAM: u64 = 2;
const STEP_STREAM: u64 = 3;
const DIAGNOSTIC_STREAM: u64 = 4;

/// Metrics of one epoch. Epoch 0 is measured before any update and carries
/// only the diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Per-term means over the epoch's batches.
    pub losses: Option<LossBreakdown>,
    pub total: Option<f64>,
    /// MMD between the θ_d of the diagnostic documents and a fixed draw from
    /// the Dirichlet prior.
    pub diagnostic_mmd: f64,
    pub learning_rate: f64,
    pub mlm_skipped_batches: usize,
    pub phi_skipped_batches: usize,
    /// Wall-clock seconds; omitted in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.total)
    }
}

/// Batch boundaries of one epoch: full batches plus a trailing partial
/// batch if it holds at least two documents.
fn batch_ranges(n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + m).min(n);
        if end - start >= 2 {
            out.push((start, end));
        }
        start = end;
    }
    out
}

struct Diagnostic {
    docs: Vec<usize>,
    prior: Vec<f64>,
}

impl CwtmModel {
    fn diagnostic(&self, docs: &[TokenizedDoc], d: &Diagnostic) -> Result<f64> {
        let z = self.config.num_topics;
        let mut q = Vec::with_capacity(d.docs.len() * z);
        for &i in &d.docs {
            let mut g = Graph::new();
            let f = self.forward_doc(&mut g, &docs[i], false)?;
            q.extend_from_slice(g.value(f.theta_d).data());
        }
        mmd_idk_flat(&q, &d.prior, d.docs.len(), z)
    }

    /// Trains in place and returns the per-epoch history. With
    /// `deterministic` set no wall-clock time is recorded, so two runs with
    /// the same seed produce identical histories.
    pub fn train(&mut self, corpus: &[DocumentRecord], deterministic: bool) -> Result<TrainHistory> {
        let m = self.config.batch_size;
        let mut docs = Vec::with_capacity(corpus.len());
        for d in corpus {
            let t = self.tokenize(d);
            if t.is_empty() {
                log::warn!("skipping document '{}' with no words", d.id);
            } else {
                docs.push(t);
            }
        }
        if docs.len() < 2 * m {
            return Err(CwtmError::CorpusTooSmall {
                have: docs.len(),
                need: 2 * m,
            });
        }
        let batches = batch_ranges(docs.len(), m);
        let total_steps = batches.len() * self.config.epochs;
        let schedule = WarmupLinear::new(self.config.learning_rate, self.config.warmup_fraction, total_steps);
        let mut adam = Adam::new();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, SHUFFLE_STREAM));
        let mut step_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, STEP_STREAM));

        let diag_n = self.config.diagnostic_docs.min(docs.len());
        let prior = DirichletPrior::new(self.config.dirichlet_alpha, self.config.num_topics)?;
        let mut diag_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, DIAGNOSTIC_STREAM));
        let diag = Diagnostic {
            docs: (0..diag_n).collect(),
            prior: sample_dirichlet_flat(&prior, diag_n, &mut diag_rng),
        };

        let mut history = TrainHistory::default();
        let clock = (!deterministic).then(Instant::now);
        history.epochs.push(EpochRecord {
            epoch: 0,
            steps: 0,
            losses: None,
            total: None,
            diagnostic_mmd: self.diagnostic(&docs, &diag)?,
            learning_rate: schedule.lr(0),
            mlm_skipped_batches: 0,
            phi_skipped_batches: 0,
            seconds: clock.map(|c| c.elapsed().as_secs_f64()),
        });

        let mut order: Vec<usize> = (0..docs.len()).collect();
        let mut step = 0;
        for epoch in 1..=self.config.epochs {
            let started = (!deterministic).then(Instant::now);
            order.shuffle(&mut shuffle_rng);
            let mut sums = LossBreakdown::default();
            let mut total_sum = 0.0;
            let (mut mlm_skipped, mut phi_skipped) = (0, 0);
            for &(start, end) in &batches {
                let batch: Vec<TokenizedDoc> = order[start..end].iter().map(|&i| docs[i].clone()).collect();
                let seed: u64 = step_rng.random();
                let mut g = Graph::new();
                let obj = self.batch_objective(&mut g, &batch, seed)?;
                let grads = g.backward(obj.total);
                let lr = schedule.lr(step);
                adam.step(self.store_mut(), &grads, lr);
                sums.add_scaled(&obj.terms, 1.0);
                total_sum += g.scalar(obj.total);
                mlm_skipped += obj.mlm_skipped as usize;
                phi_skipped += obj.phi_skipped as usize;
                step += 1;
            }
            let n = batches.len() as f64;
            let mut means = LossBreakdown::default();
            means.add_scaled(&sums, 1.0 / n);
            let record = EpochRecord {
                epoch,
                steps: step,
                losses: Some(means),
                total: Some(total_sum / n),
                diagnostic_mmd: self.diagnostic(&docs, &diag)?,
                learning_rate: schedule.lr(step.saturating_sub(1)),
                mlm_skipped_batches: mlm_skipped,
                phi_skipped_batches: phi_skipped,
                seconds: started.map(|s| s.elapsed().as_secs_f64()),
            };
            log::info!(
                "epoch {epoch}: loss {:.4} (mi {:.4} mlm {:.4} rec {:.4} mmd_theta {:.4} mmd_phi {:.4}), diagnostic {:.4}",
                record.total.unwrap_or(0.0),
                means.mi,
                means.mlm,
                means.rec,
                means.mmd_theta,
                means.mmd_phi,
                record.diagnostic_mmd
            );
            history.epochs.push(record);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{corpus, small};
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::model::TrainConfig;
    use crate::nn::ParamGroup;

    #[test]
    fn partial_batches() {
        assert_eq!(batch_ranges(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_ranges(9, 4), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn too_small_corpus() {
        let (mut model, docs) = small(TrainConfig::default());
        assert!(matches!(
            model.train(&docs[..7], true),
            Err(CwtmError::CorpusTooSmall { have: 7, need: 8 })
        ));
    }

    #[test]
    fn every_trainable_group_moves_and_run_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            warmup_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (model, docs) = small(cfg);
        let before = model.store().clone();
        let mut a = model.clone();
        let ha = a.train(&docs, true).unwrap();
        assert_eq!(ha.epochs.len(), 3);
        assert!(ha.epochs[0].losses.is_none());
        for group in ParamGroup::ALL {
            let changed = a
                .store()
                .group_ids(group)
                .iter()
                .any(|&id| a.store().value(id) != before.value(id));
            assert_eq!(changed, group != ParamGroup::BackboneBase, "{group}");
        }
        let mut b = model.clone();
        let hb = b.train(&docs, true).unwrap();
        assert_eq!(ha, hb);
        assert!(serde_json::to_string(&ha).unwrap() == serde_json::to_string(&hb).unwrap());
        for d in &docs {
            let inf = a.infer_document(d).unwrap();
            crate::geometry::check_simplex(inf.document.theta_d.as_slice()).unwrap();
        }
    }

    #[test]
    fn unfrozen_base_trains_too() {
        let docs = corpus(12);
        let bb = BackboneConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            prompt_len: 0,
            freeze_base: false,
            ..BackboneConfig::default()
        };
        let cfg = TrainConfig {
            num_topics: 3,
            batch_size: 4,
            hidden: 8,
            epochs: 1,
            warmup_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut model = CwtmModel::new(cfg, bb, &docs, None).unwrap();
        let before = model.store().clone();
        model.train(&docs, true).unwrap();
        let id = before.find("backbone.tok_emb").unwrap();
        assert_ne!(model.store().value(id), before.value(id));
    }
}
